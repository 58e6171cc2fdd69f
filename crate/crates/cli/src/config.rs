use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use roadinspect::data::AugmentConfig;
use roadinspect::detect::{DEFAULT_CONF_THRESH, DEFAULT_NMS_THRESH};
use roadinspect::kvfile::{Document, Section};
use roadinspect::model::{NetworkConfig, Variant, CANONICAL_BASE_FILTERS};
use roadinspect::nn::TrainConfig;
use roadinspect::servo::{LostTargetPolicy, ServoConfig};

pub const DATA_CLASSES: usize = 3;

/// Everything a run needs, assembled from defaults, an optional config file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub base_filters: usize,
    pub boxes: usize,
    pub train: TrainConfig,
    pub checkpoint_every: usize,
    pub patience: usize,
    pub train_fraction: f64,
    pub augment: Option<AugmentConfig>,
    pub servo: ServoConfig,
    pub scene: Option<PathBuf>,
    pub dataset_count: usize,
    pub max_ticks: u64,
    pub realtime: bool,
    pub conf_thresh: f64,
    pub nms_thresh: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            variant: Variant::Improved,
            base_filters: 4,
            boxes: 2,
            train: TrainConfig::desk(),
            checkpoint_every: 1000,
            patience: 500,
            train_fraction: 0.8,
            augment: Some(AugmentConfig::full_scale()),
            servo: ServoConfig::default(),
            scene: None,
            dataset_count: 200,
            max_ticks: 3000,
            realtime: false,
            conf_thresh: DEFAULT_CONF_THRESH,
            nms_thresh: DEFAULT_NMS_THRESH,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }

    /// Full-size network, 416 px input, the original optimizer schedule and a 1000-image set.
    pub fn full_scale() -> Self {
        Self { base_filters: CANONICAL_BASE_FILTERS, train: TrainConfig::full_scale(), dataset_count: 1000, ..Self::desk() }
    }

    pub fn network(&self, variant: Variant) -> Result<NetworkConfig> {
        Ok(NetworkConfig::preset_scaled(variant, DATA_CLASSES, self.boxes, self.train.input_size, self.base_filters)?)
    }

    /// Applies a config file on top of `self`. Unknown sections or keys are errors.
    pub fn apply_text(&mut self, text: &str, base_dir: &Path) -> Result<()> {
        let doc = Document::parse(text)?;
        let root = doc.root();
        root.check_keys(&["seed", "out"])?;
        if let Some(s) = root.parse("seed")? {
            self.seed = s;
        }
        if let Some(o) = root.get("out") {
            self.out = base_dir.join(o);
        }
        for s in doc.sections.iter().skip(1) {
            match s.name.as_str() {
                "network" => self.apply_network(s)?,
                "train" => self.apply_train(s)?,
                "augment" => self.apply_augment(s)?,
                "servo" => self.apply_servo(s)?,
                "sim" => {
                    s.check_keys(&["scene", "max_ticks", "realtime"])?;
                    if let Some(p) = s.get("scene") {
                        self.scene = Some(base_dir.join(p));
                    }
                    set(&mut self.max_ticks, s, "max_ticks")?;
                    set(&mut self.realtime, s, "realtime")?;
                }
                "detect" => {
                    s.check_keys(&["conf_thresh", "nms_thresh"])?;
                    set(&mut self.conf_thresh, s, "conf_thresh")?;
                    set(&mut self.nms_thresh, s, "nms_thresh")?;
                }
                "data" => {
                    s.check_keys(&["count", "train_fraction"])?;
                    set(&mut self.dataset_count, s, "count")?;
                    set(&mut self.train_fraction, s, "train_fraction")?;
                }
                other => bail!("line {}: unknown section [{other}]", s.line),
            }
        }
        Ok(())
    }

    fn apply_network(&mut self, s: &Section) -> Result<()> {
        s.check_keys(&["variant", "base_filters", "boxes", "input_size"])?;
        set(&mut self.variant, s, "variant")?;
        set(&mut self.base_filters, s, "base_filters")?;
        set(&mut self.boxes, s, "boxes")?;
        set(&mut self.train.input_size, s, "input_size")
    }

    fn apply_train(&mut self, s: &Section) -> Result<()> {
        s.check_keys(&[
            "learning_rate",
            "momentum",
            "decay",
            "batch_size",
            "subdivisions",
            "iterations",
            "checkpoint_every",
            "patience",
        ])?;
        let t = &mut self.train;
        set(&mut t.learning_rate, s, "learning_rate")?;
        set(&mut t.momentum, s, "momentum")?;
        set(&mut t.decay, s, "decay")?;
        set(&mut t.batch_size, s, "batch_size")?;
        set(&mut t.subdivisions, s, "subdivisions")?;
        set(&mut t.iterations, s, "iterations")?;
        set(&mut self.checkpoint_every, s, "checkpoint_every")?;
        set(&mut self.patience, s, "patience")
    }

    fn apply_augment(&mut self, s: &Section) -> Result<()> {
        s.check_keys(&["enabled", "saturation", "exposure", "hue"])?;
        let mut a = self.augment.unwrap_or_default();
        set(&mut a.saturation, s, "saturation")?;
        set(&mut a.exposure, s, "exposure")?;
        set(&mut a.hue, s, "hue")?;
        let enabled: bool = s.parse("enabled")?.unwrap_or(self.augment.is_some());
        self.augment = enabled.then_some(a);
        Ok(())
    }

    fn apply_servo(&mut self, s: &Section) -> Result<()> {
        s.check_keys(&["k_roll", "k_yaw", "k_vertical", "forward_speed", "backoff", "width_threshold", "lost_target"])?;
        let c = &mut self.servo;
        set(&mut c.k_roll, s, "k_roll")?;
        set(&mut c.k_yaw, s, "k_yaw")?;
        set(&mut c.k_vertical, s, "k_vertical")?;
        set(&mut c.forward_speed, s, "forward_speed")?;
        set(&mut c.backoff, s, "backoff")?;
        set(&mut c.width_threshold, s, "width_threshold")?;
        if let Some(p) = s.get("lost_target") {
            c.lost_target = parse_policy(p).with_context(|| format!("line {}: lost_target", s.line))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.servo.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.network(self.variant)?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction {} not in (0, 1)", self.train_fraction);
        }
        if !(0.0..=1.0).contains(&self.conf_thresh) || !(0.0..=1.0).contains(&self.nms_thresh) {
            bail!("detection thresholds must lie in [0, 1]");
        }
        if self.checkpoint_every == 0 || self.patience == 0 {
            bail!("checkpoint_every and patience must be positive");
        }
        if let Some(p) = &self.scene {
            if !p.exists() {
                bail!("scene file {} does not exist", p.display());
            }
        }
        Ok(())
    }
}

fn set<T: std::str::FromStr>(slot: &mut T, s: &Section, key: &str) -> Result<()>
where
    T::Err: std::fmt::Display,
{
    if let Some(v) = s.parse(key)? {
        *slot = v;
    }
    Ok(())
}

/// `hover` or `land_after:N`.
pub fn parse_policy(s: &str) -> Result<LostTargetPolicy> {
    if s == "hover" {
        return Ok(LostTargetPolicy::Hover);
    }
    if let Some(n) = s.strip_prefix("land_after:") {
        return Ok(LostTargetPolicy::LandAfter(n.trim().parse()?));
    }
    bail!("expected 'hover' or 'land_after:N', got {s:?}")
}
