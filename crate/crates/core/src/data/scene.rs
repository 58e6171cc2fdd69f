//! Crude ray-cast renderer of a flat road seen from a forward-down camera.
//!
//! World frame: `x` points north, `y` east, `z` up (meters). Heading is measured
//! clockwise from north, so the body forward axis is `(cos h, sin h)` and the body
//! right axis is `(-sin h, cos h)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Annotation, RoadClass, Sample};
use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::kvfile::{Document, Section};
use crate::tensor::Tensor;

const ROAD: [f64; 3] = [0.45, 0.45, 0.47];
const LANE: [f64; 3] = [0.92, 0.80, 0.12];
const POTHOLE: [f64; 3] = [0.17, 0.15, 0.13];
const CRACK: [f64; 3] = [0.10, 0.10, 0.10];
const GRASS: [f64; 3] = [0.30, 0.50, 0.24];
const SKY: [f64; 3] = [0.62, 0.76, 0.95];
const MAX_RANGE: f64 = 80.0;
const CRACK_SEGMENTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Horizontal field of view in radians. Pixels are square.
    pub hfov: f64,
    /// Square image side in pixels.
    pub size: usize,
    /// Downward tilt of the optical axis from horizontal, radians.
    pub pitch: f64,
}

impl CameraModel {
    pub fn new(hfov: f64, size: usize, pitch: f64) -> Result<Self> {
        let cam = Self { hfov, size, pitch };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hfov > 0.0 && self.hfov < std::f64::consts::PI) {
            return Err(Error::Config(format!("field of view {} not in (0, pi)", self.hfov)));
        }
        if self.size < 16 {
            return Err(Error::Config(format!("image size {} below 16", self.size)));
        }
        if !self.pitch.is_finite() {
            return Err(Error::Config("camera pitch must be finite".into()));
        }
        Ok(())
    }

    fn focal(&self) -> f64 {
        (self.size as f64 / 2.0) / (self.hfov / 2.0).tan()
    }

    /// World-frame ray through the normalized image point `(u, v)`.
    fn ray(&self, pose: &Pose, u: f64, v: f64) -> [f64; 3] {
        let f = self.focal();
        let half = self.size as f64 / 2.0;
        let xn = (u * self.size as f64 - half) / f;
        let yn = (v * self.size as f64 - half) / f;
        let (sh, ch) = pose.heading.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let fwd = [ch, sh, 0.0];
        let right = [-sh, ch, 0.0];
        let axis = [cp * fwd[0], cp * fwd[1], -sp];
        let up = [sp * fwd[0], sp * fwd[1], cp];
        [
            axis[0] + xn * right[0] - yn * up[0],
            axis[1] + xn * right[1] - yn * up[1],
            axis[2] + xn * right[2] - yn * up[2],
        ]
    }

    /// Flat-ground point seen at the normalized image point, if the ray hits the ground in range.
    pub fn ground_point(&self, pose: &Pose, u: f64, v: f64) -> Option<(f64, f64)> {
        let r = self.ray(pose, u, v);
        if r[2] >= -1e-9 || pose.z <= 0.0 {
            return None;
        }
        let t = -pose.z / r[2];
        let (dx, dy) = (t * r[0], t * r[1]);
        if (dx * dx + dy * dy).sqrt() > MAX_RANGE {
            return None;
        }
        Some((pose.x + dx, pose.y + dy))
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { hfov: 60f64.to_radians(), size: 128, pitch: 45f64.to_radians() }
    }
}

/// Flat-ground back-projection of a normalized image point.
pub fn back_project(cam: &CameraModel, pose: &Pose, u: f64, v: f64) -> Option<(f64, f64)> {
    cam.ground_point(pose, u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, heading: f64) -> Self {
        Self { x, y, z, heading }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectKind {
    Crack,
    Pothole,
}

impl DefectKind {
    pub fn class(self) -> RoadClass {
        match self {
            DefectKind::Crack => RoadClass::Cracks,
            DefectKind::Pothole => RoadClass::Pothole,
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefectKind::Crack => "crack",
            DefectKind::Pothole => "pothole",
        })
    }
}

impl FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crack" => Ok(DefectKind::Crack),
            "pothole" => Ok(DefectKind::Pothole),
            _ => Err(Error::Config(format!("unknown defect kind {s:?}"))),
        }
    }
}

/// One defect on the road surface. `size` is the pothole diameter or crack length in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defect {
    pub kind: DefectKind,
    pub x: f64,
    pub y: f64,
    pub size: f64,
    /// Long-axis direction in radians, measured like the heading.
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadExtent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl RoadExtent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub lane: Vec<(f64, f64)>,
    pub lane_width: f64,
    pub road: RoadExtent,
    pub defects: Vec<Defect>,
    /// Half-width of uniform per-pixel speckle; zero disables it.
    pub noise: f64,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected 'x,y', got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_err(section: &Section, msg: String) -> Error {
    Error::Parse { line: section.line, msg }
}

impl SceneSpec {
    /// A straight north-running lane of the given length starting at the origin.
    pub fn straight(length: f64, seed: u64) -> Self {
        Self {
            seed,
            lane: vec![(0.0, 0.0), (length, 0.0)],
            lane_width: 0.3,
            road: RoadExtent { min_x: -5.0, min_y: -4.0, max_x: length + 5.0, max_y: 4.0 },
            defects: Vec::new(),
            noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lane.len() < 2 {
            return Err(Error::Config("lane polyline needs at least two points".into()));
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::Config("lane width must be positive".into()));
        }
        let r = &self.road;
        if !(r.min_x < r.max_x && r.min_y < r.max_y) {
            return Err(Error::Config("road extent is empty".into()));
        }
        for (i, d) in self.defects.iter().enumerate() {
            if !r.contains(d.x, d.y) {
                return Err(Error::Config(format!("defect {i} at ({}, {}) is off the road", d.x, d.y)));
            }
            if !(d.size > 0.0) {
                return Err(Error::Config(format!("defect {i} has non-positive size")));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let root = doc.root();
        root.check_keys(&["seed", "lane", "lane_width", "road", "noise"])?;
        let seed: u64 = root.parse("seed")?.unwrap_or(0);
        let lane_raw: String = root.require("lane")?;
        let lane = lane_raw
            .split(';')
            .map(|p| parse_pair(p.trim()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|m| parse_err(root, format!("lane: {m}")))?;
        let road_raw: String = root.require("road")?;
        let nums: Vec<f64> = road_raw
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(root, format!("road: {e}")))?;
        if nums.len() != 4 {
            return Err(parse_err(root, "road needs min_x,min_y,max_x,max_y".into()));
        }
        let road = RoadExtent { min_x: nums[0], min_y: nums[1], max_x: nums[2], max_y: nums[3] };

        let mut defects = Vec::new();
        let mut angle_rng = ChaCha8Rng::seed_from_u64(seed);
        for s in doc.sections.iter().skip(1) {
            if s.name != "defect" {
                return Err(parse_err(s, format!("unexpected section [{}]", s.name)));
            }
            s.check_keys(&["kind", "at", "size", "angle"])?;
            let at: String = s.require("at")?;
            let (x, y) = parse_pair(&at).map_err(|m| parse_err(s, format!("at: {m}")))?;
            let default_angle = angle_rng.gen_range(0.0..std::f64::consts::PI);
            defects.push(Defect {
                kind: s.require("kind")?,
                x,
                y,
                size: s.require("size")?,
                angle: s.parse("angle")?.unwrap_or(default_angle),
            });
        }
        let spec = Self {
            seed,
            lane,
            lane_width: root.parse("lane_width")?.unwrap_or(0.3),
            road,
            defects,
            noise: root.parse("noise")?.unwrap_or(0.0),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut root = Section::new("");
        let lane: Vec<String> = self.lane.iter().map(|(x, y)| format!("{x},{y}")).collect();
        let r = &self.road;
        root.push("seed", self.seed)
            .push("lane", lane.join("; "))
            .push("lane_width", self.lane_width)
            .push("road", format!("{},{},{},{}", r.min_x, r.min_y, r.max_x, r.max_y))
            .push("noise", self.noise);
        let mut doc = Document { sections: vec![root] };
        for d in &self.defects {
            let mut s = Section::new("defect");
            s.push("kind", d.kind)
                .push("at", format!("{},{}", d.x, d.y))
                .push("size", d.size)
                .push("angle", d.angle);
            doc.sections.push(s);
        }
        doc.render()
    }
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn polyline_dist(p: (f64, f64), pts: &[(f64, f64)]) -> f64 {
    pts.windows(2).map(|w| seg_dist(p, w[0], w[1])).fold(f64::INFINITY, f64::min)
}

enum Shape {
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, cos: f64, sin: f64 },
    Jagged { pts: Vec<(f64, f64)>, half_width: f64, reach: f64 },
}

impl Shape {
    fn build(d: &Defect, seed: u64) -> Self {
        let (sin, cos) = d.angle.sin_cos();
        match d.kind {
            DefectKind::Pothole => Shape::Ellipse { cx: d.x, cy: d.y, a: d.size / 2.0, b: 0.35 * d.size, cos, sin },
            DefectKind::Crack => {
                let key = d.x.to_bits() ^ d.y.to_bits().rotate_left(29);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key);
                let pts = (0..=CRACK_SEGMENTS)
                    .map(|i| {
                        let along = (i as f64 / CRACK_SEGMENTS as f64 - 0.5) * d.size;
                        let across = rng.gen_range(-0.12..=0.12) * d.size;
                        (d.x + along * cos - across * sin, d.y + along * sin + across * cos)
                    })
                    .collect();
                Shape::Jagged { pts, half_width: 0.05, reach: d.size }
            }
        }
    }

    fn hit(&self, p: (f64, f64)) -> bool {
        match self {
            Shape::Ellipse { cx, cy, a, b, cos, sin } => {
                let (dx, dy) = (p.0 - cx, p.1 - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Jagged { pts, half_width, reach } => {
                let c = pts[pts.len() / 2];
                if (p.0 - c.0).abs() > *reach || (p.1 - c.1).abs() > *reach {
                    return false;
                }
                polyline_dist(p, pts) <= *half_width
            }
        }
    }
}

#[derive(Default, Clone, Copy)]
struct PixelBox {
    count: usize,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl PixelBox {
    fn add(&mut self, x: usize, y: usize) {
        if self.count == 0 {
            *self = Self { count: 1, x0: x, y0: y, x1: x, y1: y };
        } else {
            self.count += 1;
            self.x0 = self.x0.min(x);
            self.y0 = self.y0.min(y);
            self.x1 = self.x1.max(x);
            self.y1 = self.y1.max(y);
        }
    }

    fn bbox(&self, size: usize) -> Option<BBox> {
        (self.count > 0).then(|| {
            let s = size as f64;
            BBox::from_corners(self.x0 as f64 / s, self.y0 as f64 / s, (self.x1 + 1) as f64 / s, (self.y1 + 1) as f64 / s)
        })
    }
}

/// Renders the scene from `pose` and labels every defect and lane pixel set that appears.
///
/// Annotations list defects in spec order followed by the lane.
pub fn generate_scene(spec: &SceneSpec, cam: &CameraModel, pose: &Pose) -> Result<Sample> {
    spec.validate()?;
    cam.validate()?;
    let n = cam.size;
    let shapes: Vec<Shape> = spec.defects.iter().map(|d| Shape::build(d, spec.seed)).collect();
    let mut boxes = vec![PixelBox::default(); shapes.len()];
    let mut lane_box = PixelBox::default();
    let mut image = Tensor::zeros(&[3, n, n]);
    let mut noise_rng = (spec.noise > 0.0).then(|| {
        let key = pose.x.to_bits() ^ pose.y.to_bits().rotate_left(16) ^ pose.z.to_bits().rotate_left(32) ^ pose.heading.to_bits().rotate_left(48);
        ChaCha8Rng::seed_from_u64(spec.seed ^ key)
    });
    let lane_half = spec.lane_width / 2.0;

    for py in 0..n {
        for px in 0..n {
            let u = (px as f64 + 0.5) / n as f64;
            let v = (py as f64 + 0.5) / n as f64;
            let color = match cam.ground_point(pose, u, v) {
                None => SKY,
                Some(p) if !spec.road.contains(p.0, p.1) => GRASS,
                Some(p) => {
                    // Later defects paint over earlier ones; all defects paint over the lane.
                    match shapes.iter().rposition(|s| s.hit(p)) {
                        Some(i) => {
                            boxes[i].add(px, py);
                            match spec.defects[i].kind {
                                DefectKind::Pothole => POTHOLE,
                                DefectKind::Crack => CRACK,
                            }
                        }
                        None if polyline_dist(p, &spec.lane) <= lane_half => {
                            lane_box.add(px, py);
                            LANE
                        }
                        None => ROAD,
                    }
                }
            };
            for (ch, &c) in color.iter().enumerate() {
                let jitter = noise_rng.as_mut().map_or(0.0, |r| r.gen_range(-spec.noise..=spec.noise));
                image.set3(ch, py, px, (c + jitter).clamp(0.0, 1.0));
            }
        }
    }

    let mut annotations: Vec<Annotation> = boxes
        .iter()
        .zip(&spec.defects)
        .filter_map(|(b, d)| b.bbox(n).map(|bb| Annotation::new(d.kind.class(), bb)))
        .collect();
    if let Some(bb) = lane_box.bbox(n) {
        annotations.push(Annotation::new(RoadClass::YellowLane, bb));
    }
    Ok(Sample {
        id: format!("scene{}_{:.2}_{:.2}_{:.2}_{:.3}", spec.seed, pose.x, pose.y, pose.z, pose.heading),
        image,
        annotations,
    })
}

/// Random training scene: a gently bent lane through a road strip with a few defects ahead of the origin.
pub fn random_scene<R: Rng + ?Sized>(rng: &mut R) -> SceneSpec {
    let length = 40.0;
    let bend = rng.gen_range(-1.5..=1.5);
    let lane: Vec<(f64, f64)> = (0..=8)
        .map(|i| {
            let x = i as f64 * length / 8.0;
            (x, bend * (x / length).powi(2))
        })
        .collect();
    let road = RoadExtent { min_x: -5.0, min_y: -5.0, max_x: length + 5.0, max_y: 5.0 };
    let count = rng.gen_range(0..=4);
    let defects = (0..count)
        .map(|_| {
            let kind = if rng.gen_bool(0.5) { DefectKind::Pothole } else { DefectKind::Crack };
            let size = match kind {
                DefectKind::Pothole => rng.gen_range(0.4..=0.9),
                DefectKind::Crack => rng.gen_range(0.9..=1.8),
            };
            Defect {
                kind,
                x: rng.gen_range(2.0..=length - 2.0),
                y: rng.gen_range(-2.5..=2.5),
                size,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();
    SceneSpec {
        seed: rng.gen(),
        lane,
        lane_width: rng.gen_range(0.25..=0.4),
        road,
        defects,
        noise: rng.gen_range(0.0..=0.03),
    }
}

/// A drone pose over the lane of a random scene, placed so that defects are often in view.
pub fn random_pose<R: Rng + ?Sized>(spec: &SceneSpec, rng: &mut R) -> Pose {
    let target = if !spec.defects.is_empty() && rng.gen_bool(0.8) {
        let d = spec.defects[rng.gen_range(0..spec.defects.len())];
        (d.x - rng.gen_range(3.0..=7.0), d.y * 0.5)
    } else {
        (rng.gen_range(0.0..=30.0), 0.0)
    };
    Pose {
        x: target.0,
        y: target.1 + rng.gen_range(-1.0..=1.0),
        z: rng.gen_range(2.5..=3.5),
        heading: rng.gen_range(-0.25..=0.25),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with(defects: Vec<Defect>) -> SceneSpec {
        SceneSpec { defects, ..SceneSpec::straight(50.0, 7) }
    }

    fn pothole(x: f64, y: f64) -> Defect {
        Defect { kind: DefectKind::Pothole, x, y, size: 0.6, angle: 0.0 }
    }

    #[test]
    fn one_pothole_in_view_gives_one_pothole_annotation() {
        let spec = spec_with(vec![pothole(5.0, 0.8)]);
        let s = generate_scene(&spec, &CameraModel::default(), &Pose::new(0.0, 0.0, 3.0, 0.0)).unwrap();
        let potholes: Vec<_> = s.annotations.iter().filter(|a| a.class == RoadClass::Pothole).collect();
        assert_eq!(potholes.len(), 1);
        assert!(potholes[0].bbox.cx > 0.5, "pothole east of the lane appears right of center");
    }

    #[test]
    fn centered_straight_lane_is_centered_in_image() {
        let s = generate_scene(&spec_with(vec![]), &CameraModel::default(), &Pose::new(5.0, 0.0, 3.0, 0.0)).unwrap();
        assert_eq!(s.annotations.len(), 1);
        let lane = s.annotations[0];
        assert_eq!(lane.class, RoadClass::YellowLane);
        assert!((lane.bbox.cx - 0.5).abs() < 0.05, "cx {}", lane.bbox.cx);
    }

    #[test]
    fn looking_away_from_the_road_gives_nothing() {
        let spec = spec_with(vec![pothole(5.0, 0.8)]);
        let s = generate_scene(&spec, &CameraModel::default(), &Pose::new(-20.0, 0.0, 3.0, std::f64::consts::PI)).unwrap();
        assert!(s.annotations.is_empty());
        assert_eq!(s.image.shape(), &[3, 128, 128]);
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut spec = spec_with(vec![pothole(5.0, 0.8), Defect { kind: DefectKind::Crack, x: 6.0, y: -1.0, size: 1.2, angle: 0.4 }]);
        spec.noise = 0.05;
        let cam = CameraModel::default();
        let pose = Pose::new(1.0, 0.2, 3.0, 0.1);
        assert_eq!(generate_scene(&spec, &cam, &pose).unwrap(), generate_scene(&spec, &cam, &pose).unwrap());
    }

    #[test]
    fn back_projection_inverts_the_image_center() {
        let cam = CameraModel::default();
        let pose = Pose::new(2.0, 1.0, 3.0, 0.0);
        let (x, y) = back_project(&cam, &pose, 0.5, 0.5).unwrap();
        // 45 degree tilt: the optical axis meets the ground 3 m ahead.
        assert!((x - 5.0).abs() < 1e-9 && (y - 1.0).abs() < 1e-9);
        let (_, y_right) = back_project(&cam, &pose, 0.9, 0.5).unwrap();
        assert!(y_right > 1.0);
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = spec_with(vec![pothole(5.0, 0.8), Defect { kind: DefectKind::Crack, x: 9.5, y: -1.25, size: 1.5, angle: 0.3 }]);
        let back = SceneSpec::from_text(&spec.to_text()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn spec_validation() {
        assert!(SceneSpec::from_text("lane=0,0\nroad=-1,-1,1,1\n").is_err());
        assert!(SceneSpec::from_text("lane=0,0;10,0\nroad=-1,-1,11,1\n[defect]\nkind=pothole\nat=20,0\nsize=0.5\n").is_err());
        assert!(SceneSpec::from_text("lane=0,0;10,0\nroad=-1,-1,11,1\n[defect]\nkind=bump\nat=2,0\nsize=0.5\n").is_err());
        assert!(CameraModel::new(0.0, 128, 0.5).is_err());
        assert!(CameraModel::new(1.0, 8, 0.5).is_err());
    }

    #[test]
    fn annotation_boxes_contain_defect_centroids() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cam = CameraModel { size: 64, ..CameraModel::default() };
        let mut checked = 0;
        for _ in 0..20 {
            let spec = random_scene(&mut rng);
            let pose = random_pose(&spec, &mut rng);
            let full = generate_scene(&spec, &cam, &pose).unwrap();
            let mut ann = full.annotations.iter();
            for i in 0..spec.defects.len() {
                // The pixels that change when defect i is removed are exactly its rendered pixels.
                let mut without = spec.clone();
                without.defects.remove(i);
                let other = generate_scene(&without, &cam, &pose).unwrap();
                let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
                for y in 0..64 {
                    for x in 0..64 {
                        if (0..3).any(|c| full.image.at3(c, y, x) != other.image.at3(c, y, x)) {
                            sx += x as f64 + 0.5;
                            sy += y as f64 + 0.5;
                            count += 1;
                        }
                    }
                }
                if count == 0 {
                    continue;
                }
                let a = ann.next().expect("visible defect has an annotation");
                assert_eq!(a.class, spec.defects[i].kind.class());
                assert!(a.bbox.contains(sx / count as f64 / 64.0, sy / count as f64 / 64.0));
                checked += 1;
            }
        }
        assert!(checked > 5, "only {checked} defects were visible");
    }
}
