//! Two-node publish/subscribe drone simulation with a deterministic scheduler.

mod bus;
mod drone;
mod frame;
mod nodes;
mod report;

use std::time::{Duration, Instant};

pub use bus::{Bus, Envelope, NodeId, Subscription, TopicName, IMAGE_QUEUE_CAPACITY};
pub use drone::{drone_step, DroneState, PlantConfig};
pub use frame::ImageFrame;
pub use nodes::{touches_border, ControlTick, Detector, NetDetector, Node01, Node02, OracleDetector};
pub use report::{
    frame_record, BufferedSink, DefectReport, FileSink, MemorySink, ReportSink, Reporter, SocketSink, DEDUP_RADIUS,
    DEFAULT_SINK_BUFFER,
};

use crate::data::{CameraModel, Defect, DefectKind, SceneSpec};
use crate::error::{Error, Result};
use crate::servo::{Servo, ServoConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub plant: PlantConfig,
    pub camera: CameraModel,
    pub servo: ServoConfig,
    /// Plant ticks between nav-data messages.
    pub nav_every: u64,
    /// Plant ticks between camera frames.
    pub image_every: u64,
    pub max_ticks: u64,
    pub dedup_radius: f64,
    pub start: DroneState,
    /// Sleep so that one plant tick takes `dt` of wall-clock time.
    pub realtime: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plant: PlantConfig::default(),
            camera: CameraModel::default(),
            servo: ServoConfig::default(),
            nav_every: 1,
            image_every: 2,
            max_ticks: 3000,
            dedup_radius: DEDUP_RADIUS,
            start: DroneState::default(),
            realtime: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.camera.validate()?;
        self.servo.validate()?;
        if self.nav_every == 0 || self.image_every == 0 {
            return Err(Error::Config("publication intervals must be at least one tick".into()));
        }
        if self.start.z < 0.0 {
            return Err(Error::Config("start altitude below ground".into()));
        }
        Ok(())
    }
}

/// Straight 50 m lane with three potholes and two cracks beside it.
pub fn canonical_scene(seed: u64) -> SceneSpec {
    let mut spec = SceneSpec::straight(50.0, seed);
    let d = |kind, x, y, size, angle| Defect { kind, x, y, size, angle };
    spec.defects = vec![
        d(DefectKind::Pothole, 8.0, 0.7, 0.6, 0.2),
        d(DefectKind::Crack, 12.0, -0.7, 1.2, 0.5),
        d(DefectKind::Pothole, 16.0, -0.8, 0.7, 1.0),
        d(DefectKind::Pothole, 24.0, 0.6, 0.5, 0.0),
        d(DefectKind::Crack, 30.0, 0.8, 1.0, 2.2),
    ];
    spec
}

/// Landed at the lane start, 1 m to the right of the lane, facing along it.
pub fn canonical_start() -> DroneState {
    DroneState::landed_at(0.0, 1.0, 0.0)
}

#[derive(Debug, Clone)]
pub struct SimSummary {
    pub ticks: u64,
    pub sim_time: f64,
    pub reports: Vec<DefectReport>,
    pub track: Vec<ControlTick>,
    pub trajectory: Vec<(f64, DroneState)>,
    pub decode_failures: u64,
    pub image_drops: u64,
    pub sink_dropped: u64,
    /// The drone flew and is back on the ground.
    pub landed: bool,
}

pub struct Simulation {
    pub bus: Bus,
    pub node01: Node01,
    pub node02: Node02,
    cfg: SimConfig,
    tick: u64,
}

impl Simulation {
    pub fn new(scene: SceneSpec, cfg: SimConfig, detector: Box<dyn Detector>, sink: BufferedSink) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        let bus = Bus::new();
        let node02 = Node02::new(&bus, scene, cfg.camera, cfg.plant, cfg.start, cfg.nav_every, cfg.image_every);
        let reporter = Reporter::new(sink, cfg.dedup_radius);
        let node01 = Node01::new(&bus, detector, Servo::new(cfg.servo)?, reporter, cfg.camera);
        Ok(Self { bus, node01, node02, cfg, tick: 0 })
    }

    pub fn sim_time(&self) -> f64 {
        self.tick as f64 * self.cfg.plant.dt
    }

    /// One scheduler round: the driver node, then the detection node.
    pub fn step(&mut self) -> Result<()> {
        let t = self.sim_time();
        self.node02.step(t)?;
        self.node01.step(t)?;
        self.tick += 1;
        Ok(())
    }

    /// Takes off and runs until the drone lands again or the tick budget runs out.
    pub fn run(&mut self) -> Result<SimSummary> {
        self.node01.start(self.sim_time())?;
        let mut trajectory = Vec::new();
        let mut flown = false;
        let wall = Instant::now();
        while self.tick < self.cfg.max_ticks {
            self.step()?;
            let s = self.node02.state();
            trajectory.push((self.sim_time(), s));
            flown |= s.flying;
            if flown && !s.flying {
                break;
            }
            if self.cfg.realtime {
                let due = Duration::from_secs_f64(self.tick as f64 * self.cfg.plant.dt);
                if let Some(wait) = due.checked_sub(wall.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        let _ = self.node01.reporter().sink().flush();
        let landed = flown && !self.node02.state().flying;
        let reporter = self.node01.reporter();
        let reports = reporter.reports().to_vec();
        let sink_dropped = reporter.sink().dropped();
        Ok(SimSummary {
            ticks: self.tick,
            sim_time: self.sim_time(),
            reports,
            track: self.node01.track.clone(),
            trajectory,
            decode_failures: self.node01.decode_failures + self.node02.decode_failures,
            image_drops: self.node01.image_drops(),
            sink_dropped,
            landed,
        })
    }
}
