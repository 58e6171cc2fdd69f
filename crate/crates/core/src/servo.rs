//! Proportional lane-following law driven by the tracked box center and width.

use crate::data::RoadClass;
use crate::detect::Detection;
use crate::error::{Error, Result};

/// Object center minus image center, in pixels. Positive `e_x` is right, positive `e_y` is down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackError {
    pub e_x: f64,
    pub e_y: f64,
}

/// Normalized setpoints, each in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlCommand {
    /// Lateral, positive to the right.
    pub roll: f64,
    /// Forward, positive ahead.
    pub pitch: f64,
    /// Heading rate, positive clockwise seen from above.
    pub yaw: f64,
    /// Climb rate, positive up.
    pub vertical: f64,
}

impl ControlCommand {
    pub fn new(roll: f64, pitch: f64, yaw: f64, vertical: f64) -> Self {
        Self { roll, pitch, yaw, vertical }.clamped()
    }

    pub fn hover() -> Self {
        Self::default()
    }

    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self { roll: c(self.roll), pitch: c(self.pitch), yaw: c(self.yaw), vertical: c(self.vertical) }
    }

    /// Four little-endian f64 values: roll, pitch, yaw, vertical.
    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (chunk, v) in out.chunks_exact_mut(8).zip([self.roll, self.pitch, self.yaw, self.vertical]) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 32 {
            return Err(Error::Format(format!("command payload is {} bytes, expected 32", bytes.len())));
        }
        let v = |i: usize| f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        Ok(Self { roll: v(0), pitch: v(1), yaw: v(2), vertical: v(3) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LostTargetPolicy {
    Hover,
    /// Hover for this many control ticks, then land.
    LandAfter(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoConfig {
    pub k_roll: f64,
    pub k_yaw: f64,
    pub k_vertical: f64,
    pub forward_speed: f64,
    /// Pitch magnitude used when backing away from a box wider than the threshold.
    pub backoff: f64,
    /// Box width as a fraction of image width above which the drone backs off.
    pub width_threshold: f64,
    pub lost_target: LostTargetPolicy,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            k_roll: 0.5,
            k_yaw: 0.3,
            k_vertical: 0.4,
            forward_speed: 0.3,
            backoff: 0.2,
            width_threshold: 0.5,
            lost_target: LostTargetPolicy::LandAfter(30),
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<()> {
        let gains = [self.k_roll, self.k_yaw, self.k_vertical, self.forward_speed, self.backoff];
        if gains.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Config("servo gains and speeds must be non-negative".into()));
        }
        if !(self.width_threshold > 0.0 && self.width_threshold < 1.0) {
            return Err(Error::Config(format!("width threshold {} not in (0, 1)", self.width_threshold)));
        }
        Ok(())
    }
}

/// Center of a pixel box.
pub fn object_center(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<(f64, f64)> {
    if xmin > xmax || ymin > ymax {
        return Err(Error::Config(format!("inverted box x [{xmin}, {xmax}] y [{ymin}, {ymax}]")));
    }
    Ok(((xmin + xmax) / 2.0, (ymin + ymax) / 2.0))
}

/// Moves the origin to the image center.
pub fn center_error(center: (f64, f64), img_w: f64, img_h: f64) -> TrackError {
    TrackError { e_x: center.0 - img_w / 2.0, e_y: center.1 - img_h / 2.0 }
}

pub fn control_law(err: TrackError, bbox_width_px: f64, img_w: f64, img_h: f64, cfg: &ServoConfig) -> ControlCommand {
    let nx = err.e_x / (img_w / 2.0);
    let ny = err.e_y / (img_h / 2.0);
    let pitch = if bbox_width_px / img_w > cfg.width_threshold { -cfg.backoff } else { cfg.forward_speed };
    ControlCommand::new(cfg.k_roll * nx, pitch, cfg.k_yaw * nx, -cfg.k_vertical * ny)
}

/// Highest-confidence lane detection; other classes are never tracked.
pub fn select_target(dets: &[Detection]) -> Option<Detection> {
    dets.iter()
        .filter(|d| d.class_id == RoadClass::YellowLane.id())
        .fold(None, |best: Option<&Detection>, d| match best {
            Some(b) if b.confidence >= d.confidence => Some(b),
            _ => Some(d),
        })
        .copied()
}

/// What the tracker wants to happen this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServoAction {
    Command(ControlCommand),
    Land,
}

/// Per-stream controller state: counts ticks without a target.
#[derive(Debug, Clone)]
pub struct Servo {
    pub cfg: ServoConfig,
    lost_ticks: usize,
}

impl Servo {
    pub fn new(cfg: ServoConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, lost_ticks: 0 })
    }

    pub fn lost_ticks(&self) -> usize {
        self.lost_ticks
    }

    /// One control tick on normalized detections for an image of the given pixel size.
    pub fn step(&mut self, dets: &[Detection], img_w: f64, img_h: f64) -> ServoAction {
        let Some(t) = select_target(dets) else {
            self.lost_ticks += 1;
            return match self.cfg.lost_target {
                LostTargetPolicy::LandAfter(n) if self.lost_ticks > n => ServoAction::Land,
                _ => ServoAction::Command(ControlCommand::hover()),
            };
        };
        self.lost_ticks = 0;
        let b = t.bbox;
        let center = ((b.cx * img_w), (b.cy * img_h));
        let err = center_error(center, img_w, img_h);
        ServoAction::Command(control_law(err, b.w * img_w, img_w, img_h, &self.cfg))
    }
}
