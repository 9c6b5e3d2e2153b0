//! Joint optimization of decoder weights and latent grid (auto-decoder).

mod adam;

pub use adam::{lr_schedule, AdamConfig, AdamState, Schedule};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::classes::ClassMap;
use crate::container::{ChunkReader, ChunkWriter, Container};
use crate::decoder::{self, CellRow, CondTables, DecoderParams, Mode, TrunkGrads};
use crate::error::{Error, Result};
use crate::latent_grid::{GridConfig, LatentGrid};
use crate::losses::{total_loss, LossReport, LossTarget, LossWeights};
use crate::num::Real;
use crate::rng::substream;
use crate::sampling::{build_batch, SamplingParams, TargetSampler, TargetSet, TrainingBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub seed: u64,
    pub max_targets: usize,
    /// Evaluate two of the four supports per target.
    pub support_subset: bool,
    pub latent_std: f64,
    /// Write a checkpoint every this many steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    pub decay_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_s: f64,
    pub lambda_g: f64,
    pub lambda_c: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = Schedule::default();
        let a = AdamConfig::default();
        let l = LossWeights::default();
        Self {
            steps: 20_000,
            seed: 0,
            max_targets: 50_000,
            support_subset: true,
            latent_std: 0.01,
            checkpoint_every: 0,
            base_lr: s.base_lr,
            warmup_steps: s.warmup_steps,
            decay_steps: s.decay_steps,
            decay_rate: s.decay_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: a.eps,
            lambda_s: l.lambda_s,
            lambda_g: l.lambda_g,
            lambda_c: l.lambda_c,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.base_lr,
            warmup_steps: self.warmup_steps,
            decay_steps: self.decay_steps,
            decay_rate: self.decay_rate,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda_s: self.lambda_s, lambda_g: self.lambda_g, lambda_c: self.lambda_c }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.loss_weights().validate()?;
        if self.max_targets == 0 {
            return Err(Error::Config("training.max_targets must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("training.beta1 and training.beta2 must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("training.adam_eps must be positive".into()));
        }
        if !(self.latent_std > 0.0 && self.latent_std.is_finite()) {
            return Err(Error::Config("training.latent_std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub params: DecoderParams<T>,
    pub grid: LatentGrid<T>,
    pub adam: AdamState<T>,
    /// Completed optimizer steps.
    pub step: u64,
}

impl<T: Real> TrainState<T> {
    /// Fresh decoder and latent grid drawn from the config seed.
    pub fn init(grid: GridConfig, num_classes: usize, cfg: &TrainConfig) -> Result<Self> {
        let params = DecoderParams::init(grid.feature_dims, num_classes, &mut substream(cfg.seed, "decoder-init", 0))?;
        let grid = LatentGrid::random(grid, cfg.latent_std, &mut substream(cfg.seed, "latent-init", 0))?;
        Ok(Self::from_model(params, grid))
    }

    pub fn from_model(params: DecoderParams<T>, grid: LatentGrid<T>) -> Self {
        let mut shapes: Vec<usize> = params.weights.slices().iter().map(|s| s.len()).collect();
        shapes.extend(grid.levels.iter().map(|l| l.len()));
        Self { params, grid, adam: AdamState::zeros_like(&shapes), step: 0 }
    }

    pub fn write_chunks(&self, c: &mut Container) {
        self.params.write_chunks(c);
        self.grid.write_chunks(c);
        let mut w = ChunkWriter::new();
        w.u64(self.step).u64(self.adam.m.len() as u64);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            w.array(m).array(v);
        }
        c.push(b"OPTM", w.finish());
    }

    pub fn read_chunks(c: &Container) -> Result<Self> {
        let params = DecoderParams::read_chunks(c)?;
        let grid = LatentGrid::read_chunks(c)?;
        if grid.config.feature_dims != params.feature_dims {
            return Err(Error::Format("checkpoint grid and decoder disagree on feature dims".into()));
        }
        let mut s = Self::from_model(params, grid);
        let mut r = ChunkReader::new(c.chunk(b"OPTM")?);
        s.step = r.u64()?;
        let n = r.u64()? as usize;
        if n != s.adam.m.len() {
            return Err(Error::Format(format!("optimizer has {n} tensors, model has {}", s.adam.m.len())));
        }
        for k in 0..n {
            let m = r.array::<T>()?;
            let v = r.array::<T>()?;
            if m.len() != s.adam.m[k].len() || v.len() != m.len() {
                return Err(Error::Format(format!("optimizer tensor {k} has the wrong length")));
            }
            s.adam.m[k] = m;
            s.adam.v[k] = v;
        }
        Ok(s)
    }
}

/// Flattens a batch into trunk rows: per active support one row.
pub fn batch_rows<T: Real>(grid: &LatentGrid<T>, batch: &TrainingBatch) -> (Vec<CellRow>, Array2<T>, Vec<LossTarget<T>>) {
    let n_rows: usize = batch.entries.iter().map(|e| e.active.iter().filter(|&&a| a).count()).sum();
    let mut cells = Vec::with_capacity(n_rows);
    let mut coords = Array2::zeros((n_rows, 9));
    let mut targets = Vec::with_capacity(batch.entries.len());
    for e in &batch.entries {
        let (c, x) = decoder::region_rows(grid, &e.region);
        let mut rows = Vec::with_capacity(4);
        let mut weights = Vec::with_capacity(4);
        for k in 0..4 {
            if !e.active[k] {
                continue;
            }
            let r = cells.len();
            cells.push(c[k]);
            coords.row_mut(r).iter_mut().zip(x[k]).for_each(|(d, s)| *d = s);
            rows.push(r);
            weights.push(T::lit(e.weights[k]));
        }
        targets.push(LossTarget { kind: e.target.kind, rows, weights });
    }
    (cells, coords, targets)
}

/// One Adam update of decoder and latent grid on `batch`.
pub fn train_step<T: Real>(state: &mut TrainState<T>, batch: &TrainingBatch, cfg: &TrainConfig) -> Result<LossReport> {
    if batch.entries.is_empty() {
        return Err(Error::Argument("train_step: empty batch".into()));
    }
    let (cells, coords, targets) = batch_rows(&state.grid, batch);
    let tables = CondTables::compute(&state.params, &state.grid)?;
    let musig = tables.lookup(&state.params, &cells);
    let (z, cache) = decoder::forward_trunk(&state.params, musig, coords.view(), Mode::Train)?;
    let (report, dz) = total_loss(z.view(), &targets, &cfg.loss_weights())?;
    let batch_mean = cache.batch_mean.clone().expect("train mode");
    let batch_var = cache.batch_var.clone().expect("train mode");
    let TrunkGrads { weights: mut grads, musig: dmusig, .. } = decoder::backward_trunk(&state.params, cache, dz.view())?;
    let mut grid_grads = LatentGrid::zeros(state.grid.config)?;
    CondTables::backward(&state.params, &state.grid, &cells, dmusig.view(), &mut grads, &mut grid_grads);

    state.params.norm.update(&batch_mean, &batch_var);
    let t = state.step + 1;
    let lr = cfg.schedule().lr(t);
    let mut g: Vec<&[T]> = grads.slices();
    g.extend(grid_grads.levels.iter().map(|l| l.as_slice().expect("standard layout")));
    let mut p: Vec<&mut [T]> = state.params.weights.slices_mut();
    p.extend(state.grid.levels.iter_mut().map(|l| l.as_slice_mut().expect("standard layout")));
    state.adam.update(&mut p, &g, lr, t, &cfg.adam());
    state.step = t;
    Ok(report)
}

/// The batch used at `step`, drawn from its own random substream so that
/// resumed runs see the same sequence.
pub fn batch_for_step(sampler: &TargetSampler<'_>, grid: &GridConfig, cfg: &TrainConfig, step: u64) -> Result<TrainingBatch> {
    let mut rng = substream(cfg.seed, "batch", step);
    let (targets, _) = sampler.draw(cfg.max_targets, &mut rng);
    if targets.is_empty() {
        return Err(Error::Data(format!("step {step} drew no usable targets")));
    }
    build_batch(&targets, grid, cfg.max_targets, cfg.support_subset, &mut rng)
}

/// Trains from `state.step` up to `until`; `on_step` sees each report and
/// the updated state.
pub fn run<T: Real>(
    state: &mut TrainState<T>,
    set: &TargetSet,
    sampling: &SamplingParams,
    cfg: &TrainConfig,
    until: u64,
    mut on_step: impl FnMut(&LossReport, &TrainState<T>) -> Result<()>,
) -> Result<()> {
    if set.targets.is_empty() && set.rays.is_empty() && set.empty_voxels.is_empty() {
        return Err(Error::Argument("cannot fit an empty target set".into()));
    }
    let sampler = TargetSampler::new(set, sampling)?;
    while state.step < until {
        let batch = batch_for_step(&sampler, &state.grid.config, cfg, state.step)?;
        let report = train_step(state, &batch, cfg)?;
        on_step(&report, state)?;
    }
    Ok(())
}

/// Trained model with the metadata needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub state: TrainState<T>,
    pub classes: ClassMap,
    /// Resolved run configuration in text form.
    pub config: String,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(b"CKPT");
        self.state.write_chunks(&mut c);
        let mut w = ChunkWriter::new();
        w.str(&self.classes.to_toml());
        c.push(b"CMAP", w.finish());
        let mut w = ChunkWriter::new();
        w.str(&self.config);
        c.push(b"CONF", w.finish());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(b"CKPT")?;
        let state = TrainState::read_chunks(c)?;
        let classes = ClassMap::from_toml(&ChunkReader::new(c.chunk(b"CMAP")?).str()?)?;
        let config = ChunkReader::new(c.chunk(b"CONF")?).str()?;
        if classes.num_classes() != state.params.num_classes {
            return Err(Error::Format("checkpoint class map does not match the decoder head".into()));
        }
        Ok(Self { state, classes, config })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Initializes and trains for `cfg.steps` steps.
pub fn fit<T: Real>(
    set: &TargetSet,
    grid: GridConfig,
    classes: &ClassMap,
    sampling: &SamplingParams,
    cfg: &TrainConfig,
    on_step: impl FnMut(&LossReport, &TrainState<T>) -> Result<()>,
) -> Result<TrainState<T>> {
    cfg.validate()?;
    set.validate(classes.num_classes())?;
    let mut state = TrainState::init(grid, classes.num_classes(), cfg)?;
    run(&mut state, set, sampling, cfg, cfg.steps, on_step)?;
    Ok(state)
}
