use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use localdif::classes::ClassMap;
use localdif::config::RunConfig;
use localdif::container::Container;
use localdif::decoder::Predictor;
use localdif::evaluation::{point_segmentation_metrics, pr_sweep, voxel_metrics, Metrics};
use localdif::extraction::{ground_image, mise_mesh, refine_and_color, voxelize, ClassImage, MiseParams, RefineParams, VoxelGrid};
use localdif::pipeline::{self, POSES_FILE};
use localdif::sampling::TargetSet;
use localdif::synthscene::SyntheticScene;
use localdif::{Checkpoint32, Error, Result};

use crate::manifest::Manifest;
use crate::Command;

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    manifest: Manifest,
}

impl Ctx<'_> {
    fn path(&self, p: &str) -> PathBuf {
        self.cfg.io.resolve(self.out, p)
    }

    fn classes(&mut self) -> Result<ClassMap> {
        if !self.cfg.io.class_map.is_empty() {
            self.manifest.input(self.path(&self.cfg.io.class_map));
        }
        self.cfg.class_map(self.out)
    }

    fn read_container(&mut self, p: &str) -> Result<Container> {
        let path = self.path(p);
        self.manifest.input(path.clone());
        Container::read(&path)
    }

    fn write_text(&mut self, path: PathBuf, text: &str) -> Result<()> {
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.manifest.output(path);
        Ok(())
    }

    fn write_bytes(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.output(path);
        Ok(())
    }

    fn write_container(&mut self, p: &str, c: &Container) -> Result<()> {
        let path = self.path(p);
        c.write(&path)?;
        self.manifest.output(path);
        Ok(())
    }

    fn scene(&mut self) -> Result<SyntheticScene> {
        let c = self.read_container(&self.cfg.io.scene.clone())?;
        SyntheticScene::from_container(&c)
    }

    fn targets(&mut self) -> Result<TargetSet> {
        let c = self.read_container(&self.cfg.io.targets.clone())?;
        TargetSet::read(&c)
    }

    fn checkpoint(&mut self) -> Result<Checkpoint32> {
        let c = self.read_container(&self.cfg.io.checkpoint.clone())?;
        Checkpoint32::from_container(&c)
    }

    fn scans(&mut self, classes: &ClassMap) -> Result<Vec<localdif::scene_io::ScanInput>> {
        let dir = self.path(&self.cfg.io.scans_dir);
        self.manifest.input(dir.clone());
        pipeline::read_scans(&dir, classes)
    }
}

/// Sibling path with `suffix` appended to the file stem.
fn with_suffix(p: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn dispatch(command: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut ctx = Ctx { cfg, out, manifest: Manifest::new(command.name()) };
    match command {
        Command::Synth => synth(&mut ctx)?,
        Command::Sample => sample(&mut ctx)?,
        Command::Fit => fit(&mut ctx)?,
        Command::Voxelize => voxelize_cmd(&mut ctx)?,
        Command::Mesh => mesh(&mut ctx)?,
        Command::GroundImage => ground(&mut ctx)?,
        Command::Eval => eval(&mut ctx)?,
        Command::PrSweep => sweep(&mut ctx)?,
        Command::Validate | Command::ShowConfig => unreachable!("handled before dispatch"),
    }
    ctx.manifest.write(out, cfg)?;
    Ok(())
}

fn synth(ctx: &mut Ctx) -> Result<()> {
    let classes = ctx.classes()?;
    let (scene, scans) = pipeline::synthesize(ctx.cfg)?;
    ctx.write_container(&ctx.cfg.io.scene.clone(), &scene.to_container())?;
    let dir = ctx.path(&ctx.cfg.io.scans_dir);
    pipeline::write_scans(&dir, &scans, &classes)?;
    ctx.manifest.output(dir.clone());
    let points: usize = scans.iter().map(|s| s.cloud.len()).sum();
    println!(
        "scene: {} primitives; {} scans, {} points -> {}",
        scene.primitives.len(),
        scans.len(),
        points,
        dir.join(POSES_FILE).display()
    );
    Ok(())
}

fn sample(ctx: &mut Ctx) -> Result<()> {
    let classes = ctx.classes()?;
    let scans = ctx.scans(&classes)?;
    let set = pipeline::accumulate_scans(ctx.cfg, &scans)?;
    ctx.write_container(&ctx.cfg.io.targets.clone(), &set.write())?;
    println!(
        "targets: {} occupied, {} rays, {} empty voxels, {} unseen voxels",
        set.targets.len(),
        set.rays.len(),
        set.empty_voxels.len(),
        set.unseen_voxels.len()
    );
    Ok(())
}

fn fit(ctx: &mut Ctx) -> Result<()> {
    let classes = ctx.classes()?;
    let set = ctx.targets()?;
    let cfg = ctx.cfg;
    let schedule = cfg.training.schedule();
    let ckpt_path = ctx.path(&cfg.io.checkpoint);
    let mut log = String::from("# step lr total semantic geometric consistency\n");
    let mut snapshots = Vec::new();
    let config_text = cfg.to_toml();
    let every = cfg.training.checkpoint_every;
    let ckpt = pipeline::fit_checkpoint(cfg, &set, &classes, |r, s| {
        let _ = writeln!(
            log,
            "{} {:.6e} {:.9e} {:.9e} {:.9e} {:.9e}",
            s.step,
            schedule.lr(s.step),
            r.total,
            r.semantic,
            r.geometric,
            r.consistency
        );
        if every > 0 && s.step % every == 0 && s.step < cfg.training.steps {
            let snap = Checkpoint32 { state: s.clone(), classes: classes.clone(), config: config_text.clone() };
            let p = with_suffix(&ckpt_path, &format!(".step{}", s.step), "ckpt");
            snap.save(&p)?;
            snapshots.push(p);
        }
        if s.step % 500 == 0 {
            eprintln!("step {} total {:.5}", s.step, r.total);
        }
        Ok(())
    })?;
    ckpt.save(&ckpt_path)?;
    ctx.manifest.output(ckpt_path.clone());
    for p in snapshots {
        ctx.manifest.output(p);
    }
    ctx.write_text(ctx.path(&cfg.io.train_log), &log)?;
    println!("checkpoint: {} at step {}", ckpt_path.display(), ckpt.state.step);
    Ok(())
}

fn voxelize_cmd(ctx: &mut Ctx) -> Result<()> {
    let ckpt = ctx.checkpoint()?;
    let model = Predictor::new(&ckpt.state.params, &ckpt.state.grid)?;
    let grid = voxelize(&model, &ctx.cfg.voxel_spec()?, ctx.cfg.extraction.theta_empty)?;
    ctx.write_container(&ctx.cfg.io.voxels.clone(), &grid.to_container())?;
    print!("{}", grid.summary(&|c| ckpt.classes.name_of(c)));
    Ok(())
}

fn mesh(ctx: &mut Ctx) -> Result<()> {
    let ckpt = ctx.checkpoint()?;
    let model = Predictor::new(&ckpt.state.params, &ckpt.state.grid)?;
    let e = &ctx.cfg.extraction;
    let params = MiseParams { theta_free: e.theta_free, coarse_edge: e.mesh_coarse_edge, final_edge: e.mesh_final_edge };
    let raw = mise_mesh(&model, &ctx.cfg.mesh_extent()?, &params)?;
    let refine = RefineParams { theta_free: e.theta_free, iters: e.refine_iters, step: e.refine_step };
    let mut mesh = refine_and_color(&model, &raw.mesh, &refine)?;
    mesh.remove_degenerate(1e-12 * e.mesh_final_edge * e.mesh_final_edge);
    ctx.write_text(ctx.path(&ctx.cfg.io.mesh), &mesh.to_ply(&ckpt.classes))?;
    println!(
        "mesh: {} vertices, {} faces; {} field evaluations ({} dense)",
        mesh.vertices.len(),
        mesh.faces.len(),
        raw.evaluations,
        raw.dense_evaluations
    );
    Ok(())
}

fn ground(ctx: &mut Ctx) -> Result<()> {
    let ckpt = ctx.checkpoint()?;
    let classes = ckpt.classes.clone();
    let model = Predictor::new(&ckpt.state.params, &ckpt.state.grid)?;
    let scans = ctx.scans(&classes)?;
    let domain = &ckpt.state.grid.config;
    let points: Vec<[f64; 3]> = scans
        .iter()
        .flat_map(|s| s.cloud.points.iter().map(|p| s.pose.apply(&p.position)))
        .filter(|p| domain.in_domain(p.x, p.y))
        .map(Into::into)
        .collect();
    let ground = pipeline::ground_classes(ctx.cfg, &classes)?;
    let (image, stats) = ground_image(&model, &points, &ground, ctx.cfg.extraction.ground_cell)?;
    let base = ctx.path(&ctx.cfg.io.ground_image);
    ctx.write_bytes(with_suffix(&base, "", "ppm"), &image.to_ppm(&classes))?;
    ctx.write_bytes(with_suffix(&base, "", "pgm"), &image.to_pgm())?;
    ctx.write_text(with_suffix(&base, "_palette", "txt"), &ClassImage::palette(&classes))?;
    println!(
        "ground image: {}x{} pixels from {} ground points, {} triangles",
        image.width, image.height, stats.ground_points, stats.triangles
    );
    Ok(())
}

fn truth(ctx: &mut Ctx) -> Result<VoxelGrid> {
    let scene = ctx.scene()?;
    let truth = pipeline::truth_grid(ctx.cfg, &scene)?;
    ctx.write_container(&ctx.cfg.io.truth.clone(), &truth.to_container())?;
    Ok(truth)
}

fn write_metrics(ctx: &mut Ctx, m: &Metrics, classes: &ClassMap, path: PathBuf) -> Result<()> {
    let name = |c| classes.name_of(c);
    let table = m.to_table(&name);
    ctx.write_text(path.clone(), &m.to_key_values(&name))?;
    ctx.write_text(with_suffix(&path, "_table", "txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn eval(ctx: &mut Ctx) -> Result<()> {
    let truth = truth(ctx)?;
    let pred = VoxelGrid::from_container(&ctx.read_container(&ctx.cfg.io.voxels.clone())?)?;
    let set = ctx.targets()?;
    let ckpt = ctx.checkpoint()?;
    let classes = ckpt.classes.clone();
    let ignore = pipeline::ignore_mask(ctx.cfg, &set, &truth.spec);
    let m = voxel_metrics(&pred, &truth, &ignore, classes.num_classes())?;
    write_metrics(ctx, &m, &classes, ctx.path(&ctx.cfg.io.metrics))?;

    let model = Predictor::new(&ckpt.state.params, &ckpt.state.grid)?;
    let scans = ctx.scans(&classes)?;
    let mut cloud = localdif::scene_io::PointCloud::new(Vec::new(), Default::default());
    let mut labels = Vec::new();
    let domain = &ckpt.state.grid.config;
    for s in &scans {
        for (p, &l) in s.cloud.transformed(&s.pose).points.into_iter().zip(&s.labels) {
            if domain.in_domain(p.position.x, p.position.y) {
                cloud.points.push(p);
                labels.push(l);
            }
        }
    }
    let pm = point_segmentation_metrics(&model, &cloud, &labels)?;
    let point_path = with_suffix(&ctx.path(&ctx.cfg.io.metrics), "_points", "txt");
    ctx.write_text(point_path, &pm.to_key_values(&|c| classes.name_of(c)))?;
    Ok(())
}

fn sweep(ctx: &mut Ctx) -> Result<()> {
    let truth = truth(ctx)?;
    let set = ctx.targets()?;
    let ckpt = ctx.checkpoint()?;
    let model = Predictor::new(&ckpt.state.params, &ckpt.state.grid)?;
    let ignore = pipeline::ignore_mask(ctx.cfg, &set, &truth.spec);
    let s = pr_sweep(&model, &truth, &ignore, &ctx.cfg.eval.thetas)?;
    let path = ctx.path(&ctx.cfg.io.pr_curve);
    ctx.write_text(path.clone(), &s.pr_points())?;
    let mut table = s.curve();
    let _ = writeln!(table, "# best theta {} occupied_iou {:.6}", s.best_theta(), s.rows[s.best].metrics.occupied_iou);
    ctx.write_text(with_suffix(&path, "_table", "txt"), &table)?;
    print!("{table}");
    Ok(())
}
