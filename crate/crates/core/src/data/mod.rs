//! Samples, labels, dataset handling and the synthetic road-scene renderer.

mod augment;
mod dataset;
mod image_io;
mod resize;
mod scene;

use std::fmt;
use std::str::FromStr;

use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, hsv_to_rgb, rgb_to_hsv, AugmentConfig};
pub use dataset::{
    load_dataset, parse_label_line, parse_labels, rng_for, split, write_labels, write_sample, SkipReport,
};
pub use image_io::{decode_ppm, encode_ppm, read_ppm, tensor_from_rgb8, tensor_to_rgb8, write_ppm};
pub use resize::{resize, resize_image};
pub use scene::{
    back_project, generate_scene, random_pose, random_scene, CameraModel, Defect, DefectKind, Pose, RoadExtent,
    SceneSpec,
};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoadClass {
    Cracks = 0,
    Pothole = 1,
    YellowLane = 2,
}

impl RoadClass {
    pub const ALL: [RoadClass; 3] = [RoadClass::Cracks, RoadClass::Pothole, RoadClass::YellowLane];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadClass::Cracks => "cracks",
            RoadClass::Pothole => "pothole",
            RoadClass::YellowLane => "yellowlane",
        }
    }

    pub fn is_defect(self) -> bool {
        self != RoadClass::YellowLane
    }
}

impl fmt::Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoadClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub class: RoadClass,
    pub bbox: BBox,
}

impl Annotation {
    pub fn new(class: RoadClass, bbox: BBox) -> Self {
        Self { class, bbox }
    }
}

/// An RGB image in `[0, 1]` with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub annotations: Vec<Annotation>,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    /// `(class id, box)` pairs in the form the loss consumes.
    pub fn truths(&self) -> Vec<(usize, BBox)> {
        self.annotations.iter().map(|a| (a.class.id(), a.bbox)).collect()
    }
}
