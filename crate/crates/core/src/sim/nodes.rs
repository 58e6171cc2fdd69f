//! Node 01 (detection, tracking, reporting) and Node 02 (drone driver and camera).

use std::path::PathBuf;

use super::bus::{Bus, NodeId, Subscription, TopicName};
use super::drone::{drone_step, DroneState, PlantConfig};
use super::frame::ImageFrame;
use super::report::Reporter;
use crate::data::{back_project, generate_scene, resize_image, write_ppm, CameraModel, SceneSpec};
use crate::detect::{decode_grid, nms, BBox, Detection, DEFAULT_CONF_THRESH, DEFAULT_NMS_THRESH};
use crate::error::Result;
use crate::model::Network;
use crate::servo::{ControlCommand, Servo, ServoAction};

pub trait Detector {
    fn detect(&mut self, frame: &ImageFrame) -> Result<Vec<Detection>>;
}

/// Replays the renderer's ground truth as perfect detections.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDetector;

impl Detector for OracleDetector {
    fn detect(&mut self, frame: &ImageFrame) -> Result<Vec<Detection>> {
        Ok(frame.truths.iter().map(|a| Detection::new(a.class.id(), 1.0, a.bbox)).collect())
    }
}

/// Runs a trained network: resize, forward, decode, NMS.
pub struct NetDetector {
    pub net: Network,
    pub conf_thresh: f64,
    pub nms_thresh: f64,
}

impl NetDetector {
    pub fn new(net: Network) -> Self {
        Self { net, conf_thresh: DEFAULT_CONF_THRESH, nms_thresh: DEFAULT_NMS_THRESH }
    }
}

impl Detector for NetDetector {
    fn detect(&mut self, frame: &ImageFrame) -> Result<Vec<Detection>> {
        let size = self.net.config().input_size;
        let img = resize_image(&frame.image()?, size, size)?;
        let out = self.net.forward(&img)?;
        Ok(nms(&decode_grid(&out, self.net.layout(), self.conf_thresh)?, self.nms_thresh))
    }
}

/// Whether a normalized box reaches within one pixel of the frame edge.
pub fn touches_border(b: &BBox, width: usize, height: usize) -> bool {
    let (mx, my) = (1.0 / width as f64, 1.0 / height as f64);
    b.x0() < mx || b.y0() < my || b.x1() > 1.0 - mx || b.y1() > 1.0 - my
}

/// One processed camera frame on the control side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlTick {
    pub sim_time: f64,
    pub frame_seq: u64,
    /// Tracked lane center minus image center in pixels, when a lane was found.
    pub e_x: Option<f64>,
    pub action: ServoAction,
}

pub struct Node01 {
    bus: Bus,
    images: Subscription,
    nav: Subscription,
    detector: Box<dyn Detector>,
    servo: Servo,
    reporter: Reporter,
    camera: CameraModel,
    latest_nav: Option<DroneState>,
    frame_dir: Option<PathBuf>,
    land_sent: bool,
    pub decode_failures: u64,
    pub track: Vec<ControlTick>,
}

impl Node01 {
    pub fn new(bus: &Bus, detector: Box<dyn Detector>, servo: Servo, reporter: Reporter, camera: CameraModel) -> Self {
        Self {
            images: bus.subscribe(TopicName::ImageRaw),
            nav: bus.subscribe(TopicName::Navdata),
            bus: bus.clone(),
            detector,
            servo,
            reporter,
            camera,
            latest_nav: None,
            frame_dir: None,
            land_sent: false,
            decode_failures: 0,
            track: Vec::new(),
        }
    }

    /// Saves the frame behind every filed report into `dir`.
    pub fn store_frames(&mut self, dir: PathBuf) {
        self.frame_dir = Some(dir);
    }

    pub fn start(&mut self, sim_time: f64) -> Result<()> {
        self.land_sent = false;
        self.bus.publish(NodeId::Node01, TopicName::Takeoff, sim_time, Vec::new())?;
        Ok(())
    }

    pub fn reset(&self, sim_time: f64) -> Result<()> {
        self.bus.publish(NodeId::Node01, TopicName::Reset, sim_time, Vec::new())?;
        Ok(())
    }

    pub fn reporter(&mut self) -> &mut Reporter {
        &mut self.reporter
    }

    /// Frames lost to the bounded image queue.
    pub fn image_drops(&self) -> u64 {
        self.images.dropped()
    }

    pub fn land_sent(&self) -> bool {
        self.land_sent
    }

    pub fn step(&mut self, sim_time: f64) -> Result<()> {
        for env in self.nav.drain() {
            match DroneState::from_bytes(&env.payload) {
                Ok(s) => self.latest_nav = Some(s),
                Err(e) => {
                    self.decode_failures += 1;
                    log::warn!("dropping nav data {}: {e}", env.seq);
                }
            }
        }
        for env in self.images.drain() {
            let frame = match ImageFrame::from_bytes(&env.payload) {
                Ok(f) => f,
                Err(e) => {
                    self.decode_failures += 1;
                    log::warn!("dropping image {}: {e}", env.seq);
                    continue;
                }
            };
            let dets = self.detector.detect(&frame)?;
            self.handle_defects(&frame, &dets, env.seq, env.sim_time)?;

            let (w, h) = (frame.width as f64, frame.height as f64);
            let action = self.servo.step(&dets, w, h);
            let e_x = crate::servo::select_target(&dets).map(|d| d.bbox.cx * w - w / 2.0);
            match action {
                ServoAction::Command(cmd) => {
                    self.bus.publish(NodeId::Node01, TopicName::CmdVel, sim_time, cmd.to_bytes().to_vec())?;
                }
                ServoAction::Land if !self.land_sent => {
                    self.bus.publish(NodeId::Node01, TopicName::Land, sim_time, Vec::new())?;
                    self.land_sent = true;
                }
                ServoAction::Land => {}
            }
            self.track.push(ControlTick { sim_time, frame_seq: env.seq, e_x, action });
        }
        Ok(())
    }

    fn handle_defects(&mut self, frame: &ImageFrame, dets: &[Detection], seq: u64, sim_time: f64) -> Result<()> {
        let image_ref = format!("frame_{seq:06}.ppm");
        let mut stored = false;
        for d in dets {
            if touches_border(&d.bbox, frame.width, frame.height) {
                continue;
            }
            let world = self
                .latest_nav
                .and_then(|nav| back_project(&self.camera, &nav.pose(), d.bbox.cx, d.bbox.cy));
            if self.reporter.report_defect(d, seq, sim_time, &image_ref, world) && !stored {
                if let Some(dir) = &self.frame_dir {
                    write_ppm(&frame.image()?, dir.join(&image_ref))?;
                    stored = true;
                }
            }
        }
        Ok(())
    }
}

pub struct Node02 {
    bus: Bus,
    reset: Subscription,
    land: Subscription,
    cmd_vel: Subscription,
    takeoff: Subscription,
    scene: SceneSpec,
    camera: CameraModel,
    plant: PlantConfig,
    initial: DroneState,
    state: DroneState,
    command: ControlCommand,
    nav_every: u64,
    image_every: u64,
    tick: u64,
    frames: u64,
    pub decode_failures: u64,
}

impl Node02 {
    pub fn new(
        bus: &Bus,
        scene: SceneSpec,
        camera: CameraModel,
        plant: PlantConfig,
        initial: DroneState,
        nav_every: u64,
        image_every: u64,
    ) -> Self {
        Self {
            reset: bus.subscribe(TopicName::Reset),
            land: bus.subscribe(TopicName::Land),
            cmd_vel: bus.subscribe(TopicName::CmdVel),
            takeoff: bus.subscribe(TopicName::Takeoff),
            bus: bus.clone(),
            scene,
            camera,
            plant,
            initial,
            state: initial,
            command: ControlCommand::hover(),
            nav_every: nav_every.max(1),
            image_every: image_every.max(1),
            tick: 0,
            frames: 0,
            decode_failures: 0,
        }
    }

    pub fn state(&self) -> DroneState {
        self.state
    }

    /// Applies pending commands, advances the plant one step, then publishes telemetry.
    pub fn step(&mut self, sim_time: f64) -> Result<()> {
        if !self.takeoff.drain().is_empty() {
            self.state = self.state.takeoff(&self.plant);
        }
        for env in self.cmd_vel.drain() {
            match ControlCommand::from_bytes(&env.payload) {
                Ok(c) => self.command = c,
                Err(e) => {
                    self.decode_failures += 1;
                    log::warn!("dropping command {}: {e}", env.seq);
                }
            }
        }
        if !self.land.drain().is_empty() {
            self.state = self.state.land();
            self.command = ControlCommand::hover();
        }
        if !self.reset.drain().is_empty() {
            self.state = self.initial;
            self.command = ControlCommand::hover();
        }
        if self.state.flying {
            self.state = drone_step(&self.state, &self.command, self.plant.dt, &self.plant);
        }

        if self.tick % self.nav_every == 0 {
            self.bus.publish(NodeId::Node02, TopicName::Navdata, sim_time, self.state.to_bytes())?;
        }
        if self.tick % self.image_every == 0 && self.state.flying {
            let sample = generate_scene(&self.scene, &self.camera, &self.state.pose())?;
            let frame = ImageFrame::from_sample(self.frames, &sample)?;
            self.frames += 1;
            self.bus.publish(NodeId::Node02, TopicName::ImageRaw, sim_time, frame.to_bytes())?;
        }
        self.tick += 1;
        Ok(())
    }
}
