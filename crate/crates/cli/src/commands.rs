use crate::{Command, ConfigArgs};
use anyhow::{bail, Context, Result};
use reloc_core::eval::{pose_stats, recall_at_k, recall_curve_csv, timing_stats, yaw_stats, EvalRun, QueryRecord};
use reloc_core::geometry::{wrap_angle, Point3, PoseSE3};
use reloc_core::io::{
    emit_eval_report, emit_report, load_config, read_pcd, read_trajectory, write_pcd, Backend,
    EvalMetrics, EvalReport, MapBundle, PcdEncoding, QuerySummary, RunConfig, TrajectoryFormat,
};
use reloc_core::model::{train, ModelWeights, TrainError, TrainParams};
use reloc_core::partition::partition_map;
use reloc_core::pose::relocalize;
use reloc_core::projection::project;
use reloc_core::sim::{
    export_dataset, generate_dataset, generate_world, load_dataset, map_from_scans, LidarModel,
    WorldSpec,
};
use reloc_core::trigger::{classify_frame, TriggerParams, TriggerState};
use reloc_core::{CloudRef, DescriptorBackend, DescriptorDatabase, SubmapRecord};
use serde_json::json;
use std::path::{Path, PathBuf};

pub enum Outcome {
    Success,
    DomainFailure(String),
}

pub fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Simulate { config, out, straights, turns, junctions, spacing, noise_sigma, dropout, map_voxel } => {
            simulate(&load_cfg(&config)?, &out, straights, turns, junctions, spacing, noise_sigma, dropout, map_voxel)
        }
        Command::Partition { config, map, trajectory, format, out } => {
            partition(&load_cfg(&config)?, &map, &trajectory, &format, &out)
        }
        Command::Train { config, dataset, out, heldout_fraction, log } => {
            run_train(&load_cfg(&config)?, &dataset, &out, heldout_fraction, log.as_deref())
        }
        Command::BuildDb { config, submaps, checkpoint, out } => {
            build_db(&load_cfg(&config)?, &submaps, checkpoint.as_deref(), &out)
        }
        Command::Relocalize { config, scan, db, checkpoint, out, stable } => {
            run_relocalize(&load_cfg(&config)?, &scan, &db, checkpoint.as_deref(), out.as_deref(), stable)
        }
        Command::Monitor { config, scans, db, checkpoint, out, stable } => {
            monitor(&load_cfg(&config)?, &scans, &db, checkpoint.as_deref(), &out, stable)
        }
        Command::Evaluate { config, dataset, db, checkpoint, out, curve_csv, stride, success_radius, stable } => {
            evaluate(
                &load_cfg(&config)?,
                &dataset,
                &db,
                checkpoint.as_deref(),
                out.as_deref(),
                curve_csv.as_deref(),
                stride,
                success_radius,
                stable,
            )
        }
    }
}

fn load_cfg(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(backend) = &args.backend {
        cfg.backend = if backend == "learned" { Backend::Learned } else { Backend::Spectral };
    }
    if let Some(k) = args.top_k {
        cfg.top_k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Holds the loaded model so the backend can borrow it.
struct BackendSlot {
    model: Option<ModelWeights>,
}

impl BackendSlot {
    fn new(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Self> {
        let model = match cfg.backend {
            Backend::Spectral => None,
            Backend::Learned => {
                let path = checkpoint
                    .context("the learned backend needs --checkpoint <model.ckpt>")?;
                Some(ModelWeights::load(path).with_context(|| format!("loading {}", path.display()))?)
            }
        };
        Ok(Self { model })
    }

    fn backend(&self) -> DescriptorBackend<'_> {
        match &self.model {
            Some(m) => DescriptorBackend::Learned(m),
            None => DescriptorBackend::Spectral,
        }
    }
}

fn scan_lidar(cfg: &RunConfig, noise_sigma: f64, dropout: f64) -> LidarModel {
    // The sensor is a fixed 16-channel puck; image resolution is a separate
    // configuration choice.
    LidarModel {
        channels: 16,
        fov_up_deg: cfg.fov_up_deg,
        fov_down_deg: cfg.fov_down_deg,
        azimuth_steps: (2 * cfg.projection_width).max(900),
        max_range_m: cfg.max_range_m,
        range_noise_sigma_m: noise_sigma,
        dropout,
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    cfg: &RunConfig,
    out: &Path,
    straights: usize,
    turns: usize,
    junctions: usize,
    spacing: f64,
    noise_sigma: f64,
    dropout: f64,
    map_voxel: f64,
) -> Result<Outcome> {
    let spec = WorldSpec { straights, turns, junctions, ..WorldSpec::default() };
    let world = generate_world(cfg.seed, &spec)?;
    let lidar = scan_lidar(cfg, noise_sigma, dropout);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let samples = generate_dataset(&world, spacing, &lidar, cfg.seed)?;
    export_dataset(&samples, out)?;
    let map = map_from_scans(&world, spacing, &lidar, map_voxel, cfg.seed)?;
    write_pcd(&map, &out.join("map.pcd"), PcdEncoding::Binary)?;

    let mut histogram = [0usize; 3];
    for s in &samples {
        histogram[s.label.index()] += 1;
    }
    println!(
        "world: {:.0} m route, {} junction(s), {} bend(s)",
        world.route_length(),
        world.junction_nodes().len(),
        world.bend_nodes().len()
    );
    println!(
        "dataset: {} samples (straight {}, junction {}, turn {}), map {} points -> {}",
        samples.len(),
        histogram[0],
        histogram[1],
        histogram[2],
        map.len(),
        out.display()
    );
    Ok(Outcome::Success)
}

fn manifest_path(submaps: &Path) -> PathBuf {
    submaps.join("manifest.json")
}

fn partition(cfg: &RunConfig, map: &Path, trajectory: &Path, format: &str, out: &Path) -> Result<Outcome> {
    let cloud = read_pcd(map)?;
    if cloud.len() > cfg.max_cloud_points {
        bail!(
            "map has {} points, above the configured max_cloud_points {}",
            cloud.len(),
            cfg.max_cloud_points
        );
    }
    let fmt = if format == "xyz" { TrajectoryFormat::Xyz } else { TrajectoryFormat::Tum };
    let traj = read_trajectory(trajectory, fmt)?;
    let bundle = MapBundle::new(
        cloud,
        traj,
        map.display().to_string(),
        trajectory.display().to_string(),
    )?;
    let submaps = partition_map(
        &bundle.map,
        &bundle.trajectory,
        cfg.crop_radius_m,
        cfg.partition_stride,
        cfg.min_submap_points,
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut entries = Vec::new();
    for s in &submaps {
        let file = format!("submap_{:06}.pcd", s.index);
        write_pcd(&s.cloud, &out.join(&file), PcdEncoding::Binary)?;
        entries.push(json!({
            "index": s.index,
            "pose_row_major": s.origin.to_matrix_row_major().to_vec(),
            "file": file,
            "points": s.cloud.len(),
        }));
    }
    let manifest = json!({
        "schema_version": 1,
        "crop_radius_m": cfg.crop_radius_m,
        "stride": cfg.partition_stride,
        "submaps": entries,
    });
    std::fs::write(manifest_path(out), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("partitioned {} submaps -> {}", submaps.len(), out.display());
    Ok(Outcome::Success)
}

fn run_train(
    cfg: &RunConfig,
    dataset: &Path,
    out: &Path,
    heldout_fraction: f64,
    log_path: Option<&Path>,
) -> Result<Outcome> {
    let samples = load_dataset(dataset)?;
    // Hold out contiguous blocks so the held-out set still contains
    // similar (within 3 m) pairs for the loss probe.
    let (train_set, heldout): (Vec<_>, Vec<_>) = if heldout_fraction > 0.0 {
        let every = (1.0 / heldout_fraction).round().max(2.0) as usize;
        let block = 5usize;
        let mut tr = Vec::new();
        let mut held = Vec::new();
        for (i, s) in samples.into_iter().enumerate() {
            if (i / block) % every == 0 {
                held.push(s);
            } else {
                tr.push(s);
            }
        }
        (tr, held)
    } else {
        (samples, Vec::new())
    };

    let params = TrainParams::from_config(cfg);
    let result = train(
        &train_set,
        (!heldout.is_empty()).then_some(&heldout[..]),
        &cfg.projection(),
        &params,
        cfg.seed,
    );
    let (mut model, report) = match result {
        Ok(v) => v,
        Err(TrainError::Diverged(epoch)) => {
            return Ok(Outcome::DomainFailure(format!("training diverged at epoch {epoch}")));
        }
        Err(e) => return Err(e.into()),
    };
    model.save(out)?;
    if let Some(path) = log_path {
        let mut lines = String::new();
        for e in &report.epochs {
            lines.push_str(&serde_json::to_string(e)?);
            lines.push('\n');
        }
        std::fs::write(path, lines)?;
    }
    for e in &report.epochs {
        log::info!(
            "epoch {:>3} [{}{}] L_pr {:.4} L_theta {:.4} L_c {:.4}{}",
            e.epoch,
            e.stage,
            if e.classifier { "+cls" } else { "" },
            e.l_pr,
            e.l_theta,
            e.l_c,
            e.heldout_l_pr.map_or(String::new(), |v| format!(" heldout L_pr {v:.4}")),
        );
    }
    println!("trained {} epochs on {} samples -> {}", report.epochs.len(), train_set.len(), out.display());
    Ok(Outcome::Success)
}

fn build_db(cfg: &RunConfig, submaps: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<Outcome> {
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(manifest_path(submaps))
            .with_context(|| format!("reading {}", manifest_path(submaps).display()))?,
    )?;
    let entries = manifest["submaps"]
        .as_array()
        .context("manifest lacks a submaps array")?;
    let slot = BackendSlot::new(cfg, checkpoint)?;
    let backend = slot.backend();
    let db_parent = out.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut records = Vec::with_capacity(entries.len());
    for e in entries {
        let index = e["index"].as_u64().context("manifest entry lacks index")?;
        let file = e["file"].as_str().context("manifest entry lacks file")?;
        let pose: Vec<f64> = e["pose_row_major"]
            .as_array()
            .context("manifest entry lacks pose_row_major")?
            .iter()
            .map(|v| v.as_f64().unwrap_or(f64::NAN))
            .collect();
        let matrix: [f64; 16] = pose
            .try_into()
            .map_err(|_| anyhow::anyhow!("pose_row_major must hold 16 values"))?;
        let origin = PoseSE3::from_matrix_row_major(&matrix)?;

        let cloud_path = submaps.join(file);
        let cloud = read_pcd(&cloud_path)?;
        let img = project(&cloud, &cfg.projection());
        let descriptor = backend.describe(&img)?;
        let class = match &backend {
            DescriptorBackend::Learned(_) => {
                Some(classify_frame(&descriptor.q, &backend)?)
            }
            DescriptorBackend::Spectral => None,
        };
        // Store the cloud path relative to the database when possible so
        // the directory stays relocatable as a unit.
        let stored = cloud_path
            .strip_prefix(&db_parent)
            .map(Path::to_path_buf)
            .unwrap_or_else(|_| cloud_path.clone());
        records.push(SubmapRecord { index, origin, descriptor, class, cloud: CloudRef::File(stored) });
    }
    let db = DescriptorDatabase::build(records)?;
    db.save(out)?;
    println!(
        "database: {} submaps, backend {} -> {}",
        db.len(),
        backend.name(),
        out.display()
    );
    Ok(Outcome::Success)
}

fn run_relocalize(
    cfg: &RunConfig,
    scan: &Path,
    db_path: &Path,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    stable: bool,
) -> Result<Outcome> {
    let cloud = read_pcd(scan)?;
    let db = DescriptorDatabase::load(db_path)?;
    let slot = BackendSlot::new(cfg, checkpoint)?;
    let result = relocalize(&cloud, &db, &slot.backend(), cfg)?;
    let report = result.to_report(stable);
    if let Some(path) = out {
        emit_report(&report, path)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    if result.failed {
        return Ok(Outcome::DomainFailure(
            "re-localization failed: no candidate passed the acceptance gates".into(),
        ));
    }
    Ok(Outcome::Success)
}

fn monitor(
    cfg: &RunConfig,
    scans: &Path,
    db_path: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    stable: bool,
) -> Result<Outcome> {
    if cfg.backend == Backend::Spectral {
        bail!("monitor requires the learned backend: the spectral backend cannot classify junctions");
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(scans)
        .with_context(|| format!("reading {}", scans.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pcd"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("{} holds no .pcd scans", scans.display());
    }
    let db = DescriptorDatabase::load(db_path)?;
    let slot = BackendSlot::new(cfg, checkpoint)?;
    let backend = slot.backend();
    std::fs::create_dir_all(out)?;

    let mut state = TriggerState::new(TriggerParams {
        debounce: cfg.trigger_debounce,
        cooldown: cfg.trigger_cooldown,
    });
    let mut events = String::new();
    let mut firings = 0usize;
    for (frame, file) in files.iter().enumerate() {
        let cloud = read_pcd(file)?;
        let img = project(&cloud, &cfg.projection());
        let descriptor = backend.describe(&img)?;
        let probabilities = backend.classify(&descriptor.q)?;
        let class = classify_frame(&descriptor.q, &backend)?;
        if state.update(class) {
            firings += 1;
            let result = relocalize(&cloud, &db, &backend, cfg)?;
            let report_file = format!("reloc_{frame:06}.json");
            emit_report(&result.to_report(stable), &out.join(&report_file))?;
            let event = json!({
                "frame": frame,
                "scan": file.file_name().and_then(|n| n.to_str()),
                "class": class.name(),
                "probabilities": probabilities.to_vec(),
                "failed": result.failed,
                "report": report_file,
            });
            let line = serde_json::to_string(&event)?;
            println!("{line}");
            events.push_str(&line);
            events.push('\n');
        }
    }
    std::fs::write(out.join("events.jsonl"), events)?;
    println!("monitored {} frames, {firings} firing(s) -> {}", files.len(), out.display());
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &RunConfig,
    dataset: &Path,
    db_path: &Path,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    curve_csv: Option<&Path>,
    stride: usize,
    success_radius: f64,
    stable: bool,
) -> Result<Outcome> {
    if stride == 0 {
        bail!("--stride must be at least 1");
    }
    let samples = load_dataset(dataset)?;
    let db = DescriptorDatabase::load(db_path)?;
    let slot = BackendSlot::new(cfg, checkpoint)?;
    let backend = slot.backend();

    let mut run = EvalRun::default();
    let mut summaries = Vec::new();
    for (qi, sample) in samples.iter().enumerate().step_by(stride) {
        let result = relocalize(&sample.scan, &db, &backend, cfg)?;
        let candidates: Vec<(u64, f64, Point3)> = result
            .retrieved
            .iter()
            .map(|&(index, dist)| {
                let pos = db.record_by_index(index).expect("retrieved index").origin.position();
                (index, dist, pos)
            })
            .collect();
        let (yaw_estimate, yaw_gt) = match result.chosen {
            Some(i) => {
                let c = &result.candidates[i];
                let origin = db.record_by_index(c.initial.candidate_index).unwrap().origin;
                let gt_rel = origin.inverse().compose(&sample.pose);
                (Some(c.initial.yaw), Some(gt_rel.yaw()))
            }
            None => (None, None),
        };
        let final_pose = (!result.failed).then(|| *result.final_transform().unwrap());
        let translation_error = final_pose.map(|p| p.position().distance(sample.pose.position()));
        summaries.push(QuerySummary {
            query: qi,
            failed: result.failed,
            chosen_index: result.chosen_index(),
            translation_error_m: translation_error,
            yaw_error_deg: match (yaw_estimate, yaw_gt) {
                (Some(e), Some(g)) => Some(wrap_angle(e - g).abs().to_degrees()),
                _ => None,
            },
            top1_index: result.retrieved[0].0,
            top1_distance: result.retrieved[0].1,
        });
        run.records.push(QueryRecord {
            gt_pose: sample.pose,
            candidates,
            yaw_estimate,
            yaw_gt,
            final_pose,
            failed: result.failed,
            timings: result.timings,
        });
    }

    let recall = recall_at_k(&run, success_radius, cfg.top_k)?;
    let (yaw_mae, yaw_std) = yaw_stats(&run).unwrap_or((f64::NAN, f64::NAN));
    let (pose_mean, pose_std) = pose_stats(&run).unwrap_or((f64::NAN, f64::NAN));
    let failed_queries = run.records.iter().filter(|r| r.failed).count();
    let metrics = EvalMetrics {
        queries: run.records.len(),
        failed_queries,
        success_radius_m: success_radius,
        recall_at_k: recall.clone(),
        yaw_mae_deg: yaw_mae,
        yaw_std_deg: yaw_std,
        pose_mean_m: pose_mean,
        pose_std_m: pose_std,
        stage_means_ms: (!stable).then(|| timing_stats(&run).unwrap_or_default()),
    };
    let report = EvalReport { schema_version: 1, metrics: metrics.clone(), queries: summaries };
    if let Some(path) = out {
        emit_eval_report(&report, path)?;
    }
    if let Some(path) = curve_csv {
        std::fs::write(path, recall_curve_csv(&recall))?;
    }
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    if failed_queries == run.records.len() {
        return Ok(Outcome::DomainFailure("every query failed the acceptance gates".into()));
    }
    Ok(Outcome::Success)
}
