//! First-order kinematic plant standing in for the quadrotor.

use crate::data::Pose;
use crate::error::{Error, Result};
use crate::servo::ControlCommand;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConfig {
    /// Speed at full roll or pitch, m/s.
    pub v_max: f64,
    /// Heading rate at full yaw, rad/s.
    pub yaw_rate_max: f64,
    /// Climb rate at full vertical command, m/s.
    pub v_climb_max: f64,
    /// Simulation step, seconds.
    pub dt: f64,
    /// Altitude reached on takeoff, meters.
    pub takeoff_altitude: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { v_max: 2.0, yaw_rate_max: 1.0, v_climb_max: 1.0, dt: 0.05, takeoff_altitude: 3.0 }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.v_max, self.yaw_rate_max, self.v_climb_max, self.dt, self.takeoff_altitude];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("plant parameters must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DroneState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
    /// Body-frame velocities, m/s.
    pub v_lateral: f64,
    pub v_forward: f64,
    pub v_vertical: f64,
    pub flying: bool,
}

impl DroneState {
    pub fn landed_at(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading, ..Default::default() }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.z, self.heading)
    }

    pub fn takeoff(&self, plant: &PlantConfig) -> Self {
        if self.flying {
            return *self;
        }
        Self { z: plant.takeoff_altitude, flying: true, v_lateral: 0.0, v_forward: 0.0, v_vertical: 0.0, ..*self }
    }

    pub fn land(&self) -> Self {
        Self { z: 0.0, flying: false, v_lateral: 0.0, v_forward: 0.0, v_vertical: 0.0, ..*self }
    }

    /// Nav-data payload: x, y, z, heading, lateral, forward, vertical velocity as LE f64, then a flag byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(57);
        for v in [self.x, self.y, self.z, self.heading, self.v_lateral, self.v_forward, self.v_vertical] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.flying as u8);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 57 || bytes[56] > 1 {
            return Err(Error::Format(format!("bad nav-data payload of {} bytes", bytes.len())));
        }
        let v = |i: usize| f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        Ok(Self {
            x: v(0),
            y: v(1),
            z: v(2),
            heading: v(3),
            v_lateral: v(4),
            v_forward: v(5),
            v_vertical: v(6),
            flying: bytes[56] == 1,
        })
    }
}

/// Advances the plant by `dt`. A landed drone ignores motion commands.
pub fn drone_step(state: &DroneState, cmd: &ControlCommand, dt: f64, plant: &PlantConfig) -> DroneState {
    if !state.flying {
        if *cmd != ControlCommand::hover() {
            log::warn!("motion command sent to a landed drone, ignored");
        }
        return *state;
    }
    let cmd = cmd.clamped();
    let v_lateral = plant.v_max * cmd.roll;
    let v_forward = plant.v_max * cmd.pitch;
    let v_vertical = plant.v_climb_max * cmd.vertical;
    let (s, c) = state.heading.sin_cos();
    let mut next = DroneState {
        x: state.x + (v_forward * c - v_lateral * s) * dt,
        y: state.y + (v_forward * s + v_lateral * c) * dt,
        z: state.z + v_vertical * dt,
        heading: state.heading + plant.yaw_rate_max * cmd.yaw * dt,
        v_lateral,
        v_forward,
        v_vertical,
        flying: true,
    };
    if next.z <= 0.0 {
        next = next.land();
    }
    next
}
