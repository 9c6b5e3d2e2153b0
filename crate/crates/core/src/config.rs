//! Run configuration: one TOML file with a section per pipeline stage.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::classes::ClassMap;
use crate::error::{Error, Result};
use crate::extraction::{DEFAULT_THETA_EMPTY, DEFAULT_THETA_FREE};
use crate::geometry::SceneExtent;
use crate::latent_grid::{GridConfig, DEFAULT_DELTA, DEFAULT_FEATURE_DIMS};
use crate::losses::LossWeights;
use crate::sampling::SamplingParams;
use crate::synthscene::{AngularGrid, SceneSpec};
use crate::trainer::{Schedule, TrainConfig};
use crate::voxel::VoxelGridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { threads: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    /// Sensor height above the ground plane at every station.
    pub station_height: f64,
    pub angular: AngularGrid,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self { station_height: 1.73, angular: AngularGrid::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub delta: f64,
    /// Finest-level (rows, cols); `[0, 0]` covers the scene extent.
    pub cells: [usize; 2],
    /// Grid corner; ignored when `cells` is derived.
    pub origin: [f64; 2],
    pub feature_dims: [usize; 3],
}

impl Default for GridSection {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, cells: [0, 0], origin: [0.0, 0.0], feature_dims: DEFAULT_FEATURE_DIMS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub decay_scale: f64,
    pub consistency_count: usize,
    /// Accumulation voxel edge for the per-voxel cap and empty-voxel sampling.
    pub voxel_edge: f64,
    pub max_per_voxel: usize,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let s = SamplingParams::default();
        Self { decay_scale: s.decay_scale, consistency_count: s.consistency_count, voxel_edge: 0.2, max_per_voxel: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub theta_empty: f64,
    pub theta_free: f64,
    pub voxel_origin: [f64; 3],
    pub voxel_edge: f64,
    pub voxel_dims: [usize; 3],
    /// Mesh extent; must lie in the latent grid's support domain.
    pub mesh_min: [f64; 3],
    pub mesh_max: [f64; 3],
    pub mesh_coarse_edge: f64,
    pub mesh_final_edge: f64,
    pub refine_iters: usize,
    pub refine_step: f64,
    /// Class names forming the ground surface.
    pub ground_classes: Vec<String>,
    pub ground_cell: f64,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        Self {
            theta_empty: DEFAULT_THETA_EMPTY,
            theta_free: DEFAULT_THETA_FREE,
            voxel_origin: [-10.0, -10.0, -0.55],
            voxel_edge: 0.2,
            voxel_dims: [100, 100, 20],
            mesh_min: [-10.0, -10.0, -0.5],
            mesh_max: [10.0, 10.0, 3.5],
            mesh_coarse_edge: 0.8,
            mesh_final_edge: 0.1,
            refine_iters: 3,
            refine_step: 0.5,
            ground_classes: vec!["road".into(), "sidewalk".into(), "parking".into(), "other-ground".into(), "terrain".into()],
            ground_cell: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Thresholds for `pr-sweep`, ascending.
    pub thetas: Vec<f64>,
    /// Exclude voxels no ray traverses and no return lands in.
    pub ignore_unobserved: bool,
    /// Ground-truth lattice subdivisions per voxel edge.
    pub truth_subdivisions: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            thetas: vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5],
            ignore_unobserved: true,
            truth_subdivisions: 4,
        }
    }
}

/// Artifact paths, relative to the output directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    pub scene: String,
    pub scans_dir: String,
    pub targets: String,
    pub checkpoint: String,
    pub train_log: String,
    pub voxels: String,
    pub truth: String,
    pub mesh: String,
    pub ground_image: String,
    pub metrics: String,
    pub pr_curve: String,
    /// TOML class map; empty selects the built-in KITTI-style map.
    pub class_map: String,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            scene: "scene.scne".into(),
            scans_dir: "scans".into(),
            targets: "targets.tset".into(),
            checkpoint: "model.ckpt".into(),
            train_log: "train_log.txt".into(),
            voxels: "voxels.voxg".into(),
            truth: "truth.voxg".into(),
            mesh: "mesh.ply".into(),
            ground_image: "ground".into(),
            metrics: "metrics.txt".into(),
            pr_curve: "pr_curve.txt".into(),
            class_map: String::new(),
        }
    }
}

impl IoSection {
    pub fn resolve(&self, out: &Path, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            out.join(p)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub scene: SceneSpec,
    pub scan: ScanSection,
    pub grid: GridSection,
    pub sampling: SamplingSection,
    pub training: TrainConfig,
    pub extraction: ExtractionSection,
    pub eval: EvalSection,
    pub io: IoSection,
}

fn all_keys(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    if let Value::Table(t) = v {
        for (k, sub) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            all_keys(sub, &key, out);
            out.insert(key);
        }
    }
}

/// Keys present in `v` but not in `reference`, each with the nearest valid
/// key by edit distance. Arrays of tables are not descended into.
fn unknown_keys(v: &Value, reference: &Value, prefix: &str, valid: &BTreeSet<String>, out: &mut Vec<(String, String)>) {
    let (Value::Table(t), Value::Table(r)) = (v, reference) else { return };
    for (k, sub) in t {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match r.get(k) {
            Some(rs) => unknown_keys(sub, rs, &key, valid, out),
            None => {
                let nearest = valid
                    .iter()
                    .min_by_key(|c| strsim::levenshtein(c, &key))
                    .cloned()
                    .unwrap_or_default();
                out.push((key, nearest));
            }
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let Value::Table(t) = cur else {
            return Err(Error::Config(format!("override '{key}': '{p}' is not a section")));
        };
        cur = t.entry(p.to_string()).or_insert_with(|| Value::Table(Default::default()));
    }
    match cur {
        Value::Table(t) => {
            t.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        _ => Err(Error::Config(format!("override '{key}' does not name a key inside a section"))),
    }
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to a
/// bare string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    let k = k.trim().to_string();
    let v = v.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(v.to_string()),
    };
    Ok((k, value))
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses TOML text and applies `key=value` overrides. Unknown keys are
    /// reported together with the nearest valid key.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut v: Value = toml::from_str::<toml::Table>(text)
            .map(Value::Table)
            .map_err(|e| Error::Config(format!("config does not parse: {e}")))?;
        for o in overrides {
            let (k, val) = parse_override(o)?;
            set_path(&mut v, &k, val)?;
        }
        let reference = Value::try_from(RunConfig::default()).expect("config serializes");
        let mut valid = BTreeSet::new();
        all_keys(&reference, "", &mut valid);
        let mut unknown = Vec::new();
        unknown_keys(&v, &reference, "", &valid, &mut unknown);
        if !unknown.is_empty() {
            let list: Vec<String> = unknown.iter().map(|(k, n)| format!("unknown key '{k}' (did you mean '{n}'?)")).collect();
            return Err(Error::Config(list.join("; ")));
        }
        v.try_into().map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {}", e.message())))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn sampling_params(&self) -> SamplingParams {
        SamplingParams { decay_scale: self.sampling.decay_scale, consistency_count: self.sampling.consistency_count }
    }

    pub fn grid_config(&self) -> Result<GridConfig> {
        let g = &self.grid;
        if g.cells == [0, 0] {
            GridConfig::covering(&self.scene.extent, g.delta, g.feature_dims)
        } else {
            GridConfig::new(g.delta, g.origin, g.cells, g.feature_dims)
        }
    }

    pub fn voxel_spec(&self) -> Result<VoxelGridSpec> {
        let e = &self.extraction;
        VoxelGridSpec::new(e.voxel_origin, e.voxel_edge, e.voxel_dims)
    }

    pub fn mesh_extent(&self) -> Result<SceneExtent> {
        SceneExtent::new(self.extraction.mesh_min, self.extraction.mesh_max)
    }

    pub fn class_map(&self, out: &Path) -> Result<ClassMap> {
        if self.io.class_map.is_empty() {
            return Ok(ClassMap::default());
        }
        let p = self.io.resolve(out, &self.io.class_map);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        ClassMap::from_toml(&text)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    /// `(location, message)`
    pub errors: Vec<(String, String)>,
    pub warnings: Vec<(String, String)>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, at: &str, msg: impl Into<String>) {
        self.errors.push((at.into(), msg.into()));
    }

    fn warn(&mut self, at: &str, msg: impl Into<String>) {
        self.warnings.push((at.into(), msg.into()));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (at, m) in &self.errors {
            s.push_str(&format!("error: {at}: {m}\n"));
        }
        for (at, m) in &self.warnings {
            s.push_str(&format!("warning: {at}: {m}\n"));
        }
        s
    }
}

fn positive(r: &mut ValidationReport, at: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        r.error(at, format!("must be a positive number, got {v}"));
    }
}

fn probability(r: &mut ValidationReport, at: &str, v: f64) {
    if !(v > 0.0 && v < 1.0) {
        r.error(at, format!("must lie in (0, 1), got {v}"));
    }
}

/// Checks every invariant of `cfg`; deviations from the reference
/// hyperparameters are warnings.
pub fn validate_config(cfg: &RunConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let t = &cfg.training;

    if let Err(e) = cfg.scene.validate() {
        r.error("scene", e.to_string());
    }
    positive(&mut r, "scan.station_height", cfg.scan.station_height);
    let a = &cfg.scan.angular;
    if a.azimuth == 0 || a.elevation == 0 {
        r.error("scan.angular", "beam counts must be at least 1");
    }
    if !(a.elevation_min < a.elevation_max) {
        r.error("scan.angular.elevation_min", "must be below elevation_max");
    }
    positive(&mut r, "scan.angular.max_range", a.max_range);

    positive(&mut r, "grid.delta", cfg.grid.delta);
    if cfg.grid.cells != [0, 0] && cfg.grid.cells.iter().any(|c| *c == 0 || c % 16 != 0) {
        r.error("grid.cells", format!("must be positive multiples of 16, got {:?}", cfg.grid.cells));
    }
    if cfg.grid.feature_dims.contains(&0) {
        r.error("grid.feature_dims", "must be positive");
    }
    if r.errors.is_empty() {
        if let Err(e) = cfg.grid_config() {
            r.error("grid", e.to_string());
        }
    }

    positive(&mut r, "sampling.decay_scale", cfg.sampling.decay_scale);
    positive(&mut r, "sampling.voxel_edge", cfg.sampling.voxel_edge);
    if cfg.sampling.max_per_voxel == 0 {
        r.error("sampling.max_per_voxel", "must be at least 1");
    }

    if t.max_targets == 0 {
        r.error("training.max_targets", "must be at least 1");
    }
    positive(&mut r, "training.base_lr", t.base_lr);
    if t.decay_steps == 0 {
        r.error("training.decay_steps", "must be at least 1");
    }
    if !(t.decay_rate > 0.0 && t.decay_rate <= 1.0) {
        r.error("training.decay_rate", format!("must lie in (0, 1], got {}", t.decay_rate));
    }
    for (k, v) in [("training.beta1", t.beta1), ("training.beta2", t.beta2)] {
        if !(0.0..1.0).contains(&v) {
            r.error(k, format!("must lie in [0, 1), got {v}"));
        }
    }
    positive(&mut r, "training.adam_eps", t.adam_eps);
    positive(&mut r, "training.latent_std", t.latent_std);
    for (k, v) in [("training.lambda_s", t.lambda_s), ("training.lambda_g", t.lambda_g), ("training.lambda_c", t.lambda_c)] {
        if !(v >= 0.0 && v.is_finite()) {
            r.error(k, format!("must be nonnegative, got {v}"));
        }
    }
    if t.lambda_s + t.lambda_g == 0.0 {
        r.error("training.lambda_s", "semantic and geometric weights cannot both be zero");
    }

    let e = &cfg.extraction;
    probability(&mut r, "extraction.theta_empty", e.theta_empty);
    probability(&mut r, "extraction.theta_free", e.theta_free);
    positive(&mut r, "extraction.voxel_edge", e.voxel_edge);
    if e.voxel_dims.contains(&0) {
        r.error("extraction.voxel_dims", "must be positive");
    }
    if (0..3).any(|i| !(e.mesh_min[i] < e.mesh_max[i])) {
        r.error("extraction.mesh_min", "must be below mesh_max on every axis");
    }
    positive(&mut r, "extraction.mesh_final_edge", e.mesh_final_edge);
    positive(&mut r, "extraction.mesh_coarse_edge", e.mesh_coarse_edge);
    let ratio = e.mesh_coarse_edge / e.mesh_final_edge;
    let rr = ratio.round();
    if !(rr >= 1.0 && (ratio - rr).abs() <= 1e-9 * ratio && (rr as u64).is_power_of_two()) {
        r.error("extraction.mesh_coarse_edge", format!("must be a power-of-two multiple of mesh_final_edge, ratio {ratio}"));
    }
    if !(e.refine_step >= 0.0) {
        r.error("extraction.refine_step", "must be nonnegative");
    }
    positive(&mut r, "extraction.ground_cell", e.ground_cell);

    for th in &cfg.eval.thetas {
        probability(&mut r, "eval.thetas", *th);
    }
    if cfg.eval.thetas.is_empty() || cfg.eval.thetas.windows(2).any(|w| w[0] > w[1]) {
        r.error("eval.thetas", "must be a non-empty ascending list");
    }
    if cfg.eval.truth_subdivisions == 0 {
        r.error("eval.truth_subdivisions", "must be at least 1");
    }

    // reference hyperparameters
    let lw = LossWeights::default();
    let s = Schedule::default();
    let refs = [
        ("grid.delta", cfg.grid.delta, DEFAULT_DELTA),
        ("training.lambda_s", t.lambda_s, lw.lambda_s),
        ("training.lambda_g", t.lambda_g, lw.lambda_g),
        ("training.base_lr", t.base_lr, s.base_lr),
        ("training.warmup_steps", t.warmup_steps as f64, s.warmup_steps as f64),
        ("training.decay_steps", t.decay_steps as f64, s.decay_steps as f64),
        ("training.decay_rate", t.decay_rate, s.decay_rate),
        ("extraction.theta_empty", e.theta_empty, DEFAULT_THETA_EMPTY),
        ("extraction.theta_free", e.theta_free, DEFAULT_THETA_FREE),
    ];
    for (k, v, d) in refs {
        if v != d {
            r.warn(k, format!("{v} differs from the reference value {d}"));
        }
    }
    if t.lambda_c == 0.0 {
        r.warn(
            "training.lambda_c",
            "0 disables the consistency loss; this is the λ_C = 0 ablation, which leaves supports free to disagree",
        );
    } else if t.lambda_c != lw.lambda_c {
        r.warn("training.lambda_c", format!("{} differs from the reference value {}", t.lambda_c, lw.lambda_c));
    }
    r
}
