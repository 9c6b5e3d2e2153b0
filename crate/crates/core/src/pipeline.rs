//! End-to-end stages shared by the command-line front end and the tests.
//! Each stage takes the resolved run configuration; randomness comes from
//! `training.seed` through named substreams.

use std::path::Path;

use crate::classes::{ClassId, ClassMap, UNLABELED};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::unobserved_mask;
use crate::extraction::VoxelGrid;
use crate::losses::LossReport;
use crate::rng::substream;
use crate::sampling::TargetSet;
use crate::scene_io::{
    accumulate, format_poses, load_labels, load_scan, parse_poses, save_raw_labels, save_scan, AccumulateParams,
    ScanInput,
};
use crate::synthscene::{generate_scene, ground_truth_voxels, reference_stations, simulate_scan, SyntheticScene};
use crate::trainer::{fit, Checkpoint, TrainState};
use crate::voxel::VoxelGridSpec;

pub const POSES_FILE: &str = "poses.txt";

/// Generates the scene and simulates one scan per reference station.
/// Clouds stay in the sensor frame; each scan carries its pose.
pub fn synthesize(cfg: &RunConfig) -> Result<(SyntheticScene, Vec<ScanInput>)> {
    let scene = generate_scene(cfg.training.seed, &cfg.scene)?;
    let scans = reference_stations(&cfg.scene, cfg.scan.station_height)
        .into_iter()
        .map(|pose| {
            let (cloud, labels) = simulate_scan(&scene, &pose, &cfg.scan.angular)?;
            Ok(ScanInput { cloud, pose, labels, dynamic: Vec::new() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scene, scans))
}

fn scan_paths(dir: &Path, i: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    (dir.join(format!("{i:06}.bin")), dir.join(format!("{i:06}.label")))
}

/// Writes scans in the KITTI layout: `NNNNNN.bin`, `NNNNNN.label` and one
/// `poses.txt` line per scan.
pub fn write_scans(dir: &Path, scans: &[ScanInput], classes: &ClassMap) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, s) in scans.iter().enumerate() {
        let (bin, label) = scan_paths(dir, i);
        save_scan(&bin, &s.cloud)?;
        let raw: Vec<u32> = s.labels.iter().map(|&c| u32::from(classes.raw_of(c).unwrap_or(0))).collect();
        save_raw_labels(&label, &raw)?;
    }
    let poses: Vec<_> = scans.iter().map(|s| s.pose).collect();
    let p = dir.join(POSES_FILE);
    std::fs::write(&p, format_poses(&poses)).map_err(|e| Error::io(&p, e))
}

/// Reads a directory written by [`write_scans`]. Missing label files give
/// unlabeled points.
pub fn read_scans(dir: &Path, classes: &ClassMap) -> Result<Vec<ScanInput>> {
    let p = dir.join(POSES_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let poses = parse_poses(&text)?;
    if poses.is_empty() {
        return Err(Error::Data(format!("{} lists no poses", p.display())));
    }
    poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            let (bin, label) = scan_paths(dir, i);
            let cloud = load_scan(&bin)?;
            let labels = if label.exists() {
                load_labels(&label, cloud.len(), classes)?
            } else {
                vec![UNLABELED; cloud.len()]
            };
            Ok(ScanInput { cloud, pose, labels, dynamic: Vec::new() })
        })
        .collect()
}

pub fn accumulate_scans(cfg: &RunConfig, scans: &[ScanInput]) -> Result<TargetSet> {
    let params = AccumulateParams {
        extent: cfg.scene.extent,
        voxel_edge: cfg.sampling.voxel_edge,
        max_per_voxel: cfg.sampling.max_per_voxel,
    };
    accumulate(scans, &params, &mut substream(cfg.training.seed, "accumulate", 0))
}

/// Fits a model from scratch; the checkpoint records the resolved config.
pub fn fit_checkpoint(
    cfg: &RunConfig,
    set: &TargetSet,
    classes: &ClassMap,
    on_step: impl FnMut(&LossReport, &TrainState<f32>) -> Result<()>,
) -> Result<Checkpoint<f32>> {
    let state = fit::<f32>(set, cfg.grid_config()?, classes, &cfg.sampling_params(), &cfg.training, on_step)?;
    Ok(Checkpoint { state, classes: classes.clone(), config: cfg.to_toml() })
}

pub fn truth_grid(cfg: &RunConfig, scene: &SyntheticScene) -> Result<VoxelGrid> {
    let spec = cfg.voxel_spec()?;
    let labels = ground_truth_voxels(scene, &spec, cfg.eval.truth_subdivisions);
    Ok(VoxelGrid { spec, labels })
}

/// Evaluation ignore mask; empty when unobserved voxels are scored.
pub fn ignore_mask(cfg: &RunConfig, set: &TargetSet, spec: &VoxelGridSpec) -> Vec<bool> {
    if cfg.eval.ignore_unobserved {
        unobserved_mask(spec, &set.rays)
    } else {
        Vec::new()
    }
}

/// Resolves the configured ground class names.
pub fn ground_classes(cfg: &RunConfig, classes: &ClassMap) -> Result<Vec<ClassId>> {
    cfg.extraction
        .ground_classes
        .iter()
        .map(|n| classes.id_by_name(n).ok_or_else(|| Error::Config(format!("extraction.ground_classes: unknown class '{n}'"))))
        .collect()
}
