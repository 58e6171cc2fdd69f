use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadinspect::data::{
    generate_scene, load_dataset, random_pose, random_scene, resize, rng_for, split, write_sample, CameraModel, Sample,
    SceneSpec,
};
use roadinspect::detect::Detection;
use roadinspect::metrics::{bench_latency, Frame, MatchOptions, MetricsReport};
use roadinspect::model::{load_weights, Network, NetworkConfig, Variant};
use roadinspect::sim::{
    canonical_scene, BufferedSink, Detector, DroneState, FileSink, NetDetector, OracleDetector, ReportSink,
    SimConfig, Simulation, SocketSink, DEFAULT_SINK_BUFFER,
};
use roadinspect::servo::ServoAction;
use roadinspect::train::{class_names, detect_frames, TrainOptions, Trainer};
use roadinspect::Tensor;

use crate::config::{RunConfig, DATA_CLASSES};
use crate::{BenchArgs, DetectorArg, EvalArgs, GenDataArgs, SimulateArgs, SinkArg, TrainArgs};

const NETWORK_FILE: &str = "network.cfg";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(cfg.out.clone())
}

fn load_scene(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SceneSpec::from_text(&text).with_context(|| format!("in {}", path.display()))
}

/// Builds the network described by `network.cfg` beside the weights (or the run
/// config when there is none) and loads the weights into it.
fn load_network(weights: &Path, cfg: &RunConfig) -> Result<Network> {
    let sibling = weights.parent().unwrap_or(Path::new(".")).join(NETWORK_FILE);
    let net_cfg = if sibling.exists() {
        let text = fs::read_to_string(&sibling)?;
        NetworkConfig::from_text(&text).with_context(|| format!("in {}", sibling.display()))?
    } else {
        cfg.network(cfg.variant)?
    };
    let mut net = Network::new(net_cfg, cfg.seed)?;
    load_weights(&mut net, weights).with_context(|| format!("loading {}", weights.display()))?;
    Ok(net)
}

fn model_name(weights: &Path) -> String {
    let stem = weights.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match weights.parent().and_then(|p| p.file_name()) {
        Some(dir) => format!("{}_{}", dir.to_string_lossy(), stem),
        None => stem,
    }
}

pub fn gen_data(cfg: RunConfig, a: GenDataArgs) -> Result<()> {
    cfg.validate()?;
    let count = a.count.unwrap_or(cfg.dataset_count);
    let size = a.size.unwrap_or(cfg.train.input_size);
    let cam = CameraModel::new(CameraModel::default().hfov, size, CameraModel::default().pitch)?;
    let fixed = match a.scene.as_ref().or(cfg.scene.as_ref()) {
        Some(p) => Some(load_scene(p)?),
        None => None,
    };
    let out = out_dir(&cfg)?;
    let mut manifest = String::new();
    let mut objects = 0usize;
    for i in 0..count {
        let id = format!("sample_{i:06}");
        let mut rng = rng_for(cfg.seed, &id);
        let spec = fixed.clone().unwrap_or_else(|| random_scene(&mut rng));
        let pose = random_pose(&spec, &mut rng);
        let mut sample = generate_scene(&spec, &cam, &pose)?;
        sample.id = id.clone();
        write_sample(&sample, &out)?;
        objects += sample.annotations.len();
        let _ = writeln!(manifest, "{id}.ppm {id}.txt {}", sample.annotations.len());
    }
    fs::write(out.join("manifest.txt"), manifest)?;
    println!("wrote {count} samples ({objects} objects) to {}", out.display());
    Ok(())
}

fn checkpoint_iteration(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("ckpt_")?.parse().ok()
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(v) = a.variant {
        cfg.variant = v.into();
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    if let Some(n) = a.checkpoint_every {
        cfg.checkpoint_every = n;
    }
    if a.no_augment {
        cfg.augment = None;
    }
    cfg.validate()?;

    let (samples, skipped) = load_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let out = out_dir(&cfg)?;
    if !skipped.is_empty() {
        fs::write(out.join("skipped.txt"), skipped.to_string())?;
    }
    if samples.len() < 2 {
        bail!("need at least two samples in {}, found {}", a.data.display(), samples.len());
    }
    let (train_set, val_set) = split(&samples, cfg.train_fraction, cfg.seed)?;
    log::info!("training on {} samples, validating on {}", train_set.len(), val_set.len());

    let net_cfg = cfg.network(cfg.variant)?;
    fs::write(out.join(NETWORK_FILE), net_cfg.to_text())?;
    let mut net = Network::new(net_cfg, cfg.seed)?;
    let mut start = 0;
    if let Some(ckpt) = &a.resume {
        load_weights(&mut net, ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
        start = match a.start_iteration.or_else(|| checkpoint_iteration(ckpt)) {
            Some(n) => n,
            None => bail!("cannot tell the iteration of {}; pass --start-iteration", ckpt.display()),
        };
    }
    let opts = TrainOptions {
        train: cfg.train.clone(),
        augment: cfg.augment,
        checkpoint_every: cfg.checkpoint_every,
        patience: cfg.patience,
        nms_thresh: cfg.nms_thresh,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut trainer = Trainer::new(net, opts)?;
    trainer.resume_at(start);
    let t0 = Instant::now();
    let summary = trainer.run(&train_set, &val_set, Some(&out))?;

    let mut text = String::new();
    let _ = writeln!(text, "variant {}", cfg.variant);
    let _ = writeln!(text, "iterations {}", trainer.iteration());
    if let (Some(first), Some(last)) = (summary.losses.first(), summary.losses.last()) {
        let _ = writeln!(text, "loss first {:.6} last {:.6}", first.total, last.total);
    }
    for c in &summary.checkpoints {
        let map = c.val_map.map_or("n/a".into(), |m| format!("{m:.2}"));
        let _ = writeln!(text, "checkpoint {} val_map {map}", c.iteration);
    }
    if let Some((it, m)) = summary.best {
        let _ = writeln!(text, "best {it} {m:.2}");
    }
    let _ = writeln!(text, "stall_warnings {}", summary.stall_warnings);
    fs::write(out.join("train_summary.txt"), &text)?;
    print!("{text}");
    log::info!("training took {:.1} s", t0.elapsed().as_secs_f64());
    Ok(())
}

fn oracle_frames(samples: &[Sample]) -> Vec<Frame> {
    samples
        .iter()
        .map(|s| Frame {
            dets: s.truths().into_iter().map(|(c, b)| Detection::new(c, 1.0, b)).collect(),
            truths: s.truths(),
        })
        .collect()
}

fn comparison(reports: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<24}", "metric");
    for (name, _) in reports {
        let _ = write!(out, " {name:>20}");
    }
    out.push('\n');
    let classes = reports[0].1.classes.len();
    for k in 0..classes {
        for metric in ["Pre", "Sen", "F1", "F2", "Dice"] {
            let _ = write!(out, "{:<24}", format!("{} {metric}", reports[0].1.classes[k].name));
            for (_, r) in reports {
                let c = &r.classes[k];
                let v = match metric {
                    "Pre" => c.precision.value,
                    "Sen" => c.sensitivity.value,
                    "F1" => c.f1,
                    "F2" => c.f2,
                    _ => c.dice.value,
                };
                let _ = write!(out, " {v:>20.2}");
            }
            out.push('\n');
        }
    }
    for (label, get) in [
        ("mAP", (|r: &MetricsReport| r.map) as fn(&MetricsReport) -> f64),
        ("accuracy", |r: &MetricsReport| r.accuracy.value),
        ("latency ms", |r: &MetricsReport| r.mean_latency.unwrap_or(0.0) * 1e3),
    ] {
        let _ = write!(out, "{label:<24}");
        for (_, r) in reports {
            let _ = write!(out, " {:>20.2}", get(r));
        }
        out.push('\n');
    }
    out
}

pub fn eval(cfg: RunConfig, a: EvalArgs) -> Result<()> {
    cfg.validate()?;
    if !a.oracle && a.weights.is_empty() {
        bail!("nothing to evaluate: pass --weights and/or --oracle");
    }
    let (samples, skipped) = load_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    if !skipped.is_empty() {
        log::warn!("skipped files:\n{skipped}");
    }
    let set = if a.all || samples.len() < 2 { samples } else { split(&samples, cfg.train_fraction, cfg.seed)?.1 };
    if set.is_empty() {
        bail!("no samples to evaluate in {}", a.data.display());
    }
    let conf = a.conf.unwrap_or(cfg.conf_thresh);
    let opts = MatchOptions { strict: a.strict };
    let names = class_names();
    let out = out_dir(&cfg)?;

    let mut reports = Vec::new();
    if a.oracle {
        reports.push(("oracle".to_string(), MetricsReport::evaluate(&oracle_frames(&set), &names, opts)));
    }
    for w in &a.weights {
        let net = load_network(w, &cfg)?;
        let t0 = Instant::now();
        let frames = detect_frames(&net, &set, conf, cfg.nms_thresh)?;
        let mut report = MetricsReport::evaluate(&frames, &names, opts);
        report.mean_latency = Some(t0.elapsed().as_secs_f64() / set.len() as f64);
        reports.push((model_name(w), report));
    }
    for (name, r) in &reports {
        let header = format!("# {name}: {} images, confidence threshold {conf}\n", set.len());
        fs::write(out.join(format!("report_{name}.txt")), format!("{header}{}", r.table()))?;
        fs::write(out.join(format!("metrics_{name}.txt")), r.lines())?;
        print!("{header}{}", r.table());
    }
    if reports.len() > 1 {
        let table = comparison(&reports);
        fs::write(out.join("comparison.txt"), &table)?;
        print!("\n{table}");
    }
    Ok(())
}

pub fn simulate(cfg: RunConfig, a: SimulateArgs) -> Result<()> {
    cfg.validate()?;
    let scene = match a.scene.as_ref().or(cfg.scene.as_ref()) {
        Some(p) => load_scene(p)?,
        None => canonical_scene(cfg.seed),
    };
    let out = out_dir(&cfg)?;
    fs::write(out.join("scene.txt"), scene.to_text())?;

    let detector: Box<dyn Detector> = match a.detector {
        DetectorArg::Oracle => Box::new(OracleDetector),
        DetectorArg::Trained => {
            let Some(w) = &a.weights else { bail!("--detector trained needs --weights") };
            let mut d = NetDetector::new(load_network(w, &cfg)?);
            d.conf_thresh = cfg.conf_thresh;
            d.nms_thresh = cfg.nms_thresh;
            Box::new(d)
        }
    };
    let sink: Box<dyn ReportSink> = match a.sink {
        SinkArg::File => Box::new(FileSink::create(out.join("reports.txt"))?),
        SinkArg::Socket => Box::new(SocketSink::new(a.addr.parse().with_context(|| format!("address {:?}", a.addr))?)),
    };

    let (x0, y0) = scene.lane[0];
    let (x1, y1) = scene.lane[1];
    let heading = (y1 - y0).atan2(x1 - x0);
    let start = DroneState::landed_at(
        x0 - a.start_offset * heading.sin(),
        y0 + a.start_offset * heading.cos(),
        heading,
    );
    let sim_cfg = SimConfig {
        servo: cfg.servo,
        max_ticks: a.max_ticks.unwrap_or(cfg.max_ticks),
        realtime: a.realtime || cfg.realtime,
        start,
        ..Default::default()
    };
    let planted = scene.defects.len();
    let mut sim = Simulation::new(scene, sim_cfg, detector, BufferedSink::new(sink, DEFAULT_SINK_BUFFER))?;
    if a.save_frames {
        let dir = out.join("frames");
        fs::create_dir_all(&dir)?;
        sim.node01.store_frames(dir);
    }
    let summary = sim.run()?;

    let mut traj = String::from("# t x y z heading flying\n");
    for (t, s) in &summary.trajectory {
        let _ = writeln!(traj, "{t:.3} {:.4} {:.4} {:.4} {:.5} {}", s.x, s.y, s.z, s.heading, s.flying as u8);
    }
    fs::write(out.join("trajectory.txt"), traj)?;
    let mut track = String::from("# t frame e_x_px action\n");
    for c in &summary.track {
        let ex = c.e_x.map_or("none".into(), |e| format!("{e:.2}"));
        let action = match c.action {
            ServoAction::Command(cmd) => {
                format!("roll={:.3} pitch={:.3} yaw={:.3} vertical={:.3}", cmd.roll, cmd.pitch, cmd.yaw, cmd.vertical)
            }
            ServoAction::Land => "land".into(),
        };
        let _ = writeln!(track, "{:.3} {} {ex} {action}", c.sim_time, c.frame_seq);
    }
    fs::write(out.join("track.txt"), track)?;

    let mut text = String::new();
    let _ = writeln!(text, "ticks {} sim_time {:.2}", summary.ticks, summary.sim_time);
    let _ = writeln!(text, "landed {}", summary.landed);
    let _ = writeln!(text, "reports {} planted_defects {planted}", summary.reports.len());
    let _ = writeln!(text, "decode_failures {} image_drops {} sink_dropped {}", summary.decode_failures, summary.image_drops, summary.sink_dropped);
    fs::write(out.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn bench(cfg: RunConfig, a: BenchArgs) -> Result<()> {
    cfg.validate()?;
    let size = a.size.unwrap_or(cfg.train.input_size);
    let images: Vec<Tensor> = match &a.images {
        Some(dir) => {
            let (samples, _) = load_dataset(dir)?;
            samples.iter().map(|s| resize(s, size).map(|s| s.image)).collect::<Result<_, _>>()?
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..4)
                .map(|_| Tensor::from_vec(&[3, size, size], (0..3 * size * size).map(|_| rng.gen()).collect()))
                .collect::<Result<_, _>>()?
        }
    };
    if images.is_empty() {
        bail!("no benchmark images");
    }
    let mut nets: Vec<(String, Network)> = Vec::new();
    if a.weights.is_empty() {
        for v in [Variant::Default, Variant::Improved] {
            let nc = NetworkConfig::preset_scaled(v, DATA_CLASSES, cfg.boxes, size, cfg.base_filters)?;
            nets.push((v.to_string(), Network::new(nc, cfg.seed)?));
        }
    } else {
        for w in &a.weights {
            nets.push((model_name(w), load_network(w, &cfg)?));
        }
    }
    let mut text = String::from("# model mean_ms min_ms max_ms runs\n");
    let mut means = Vec::new();
    for (name, net) in &nets {
        if net.config().input_size != images[0].shape()[1] {
            bail!("{name} expects {} px input; pass --size {}", net.config().input_size, net.config().input_size);
        }
        let s = bench_latency(net, &images, a.repetitions, a.warmup, cfg.conf_thresh, cfg.nms_thresh)?;
        let _ = writeln!(text, "{name} {:.4} {:.4} {:.4} {}", s.mean * 1e3, s.min * 1e3, s.max * 1e3, s.runs);
        means.push((net.variant(), s.mean));
    }
    let mean_of = |v: Variant| means.iter().find(|(x, _)| *x == v).map(|m| m.1);
    if let (Some(d), Some(i)) = (mean_of(Variant::Default), mean_of(Variant::Improved)) {
        let _ = writeln!(text, "improved_mean >= default_mean: {}", if i >= d { "yes" } else { "no" });
    }
    let out = out_dir(&cfg)?;
    fs::write(out.join("bench.txt"), &text)?;
    print!("{text}");
    Ok(())
}
