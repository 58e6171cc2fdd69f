//! Grid decoding, IoU and per-class non-maximum suppression.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{config, Error, Result};
use crate::model::HeadLayout;
use crate::tensor::Tensor;

pub const DEFAULT_CONF_THRESH: f64 = 0.25;
pub const DEFAULT_NMS_THRESH: f64 = 0.45;

/// Axis-aligned box in normalized image coordinates (center, size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        }
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Closed containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0() && x <= self.x1() && y >= self.y0() && y <= self.y1()
    }

    /// Clamps the center into `[0, 1]` and the size into `(0, 1]`.
    pub fn clamped(&self) -> Self {
        const MIN_SIZE: f64 = 1e-6;
        Self {
            cx: self.cx.clamp(0.0, 1.0),
            cy: self.cy.clamp(0.0, 1.0),
            w: self.w.clamp(MIN_SIZE, 1.0),
            h: self.h.clamp(MIN_SIZE, 1.0),
        }
    }

    pub fn is_normalized(&self) -> bool {
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
    }
}

/// Intersection over union; 0 for disjoint or zero-area boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (aa, ba) = (a.area(), b.area());
    if aa <= 0.0 || ba <= 0.0 {
        return 0.0;
    }
    let iw = (a.x1().min(b.x1()) - a.x0().max(b.x0())).max(0.0);
    let ih = (a.y1().min(b.y1()) - a.y0().max(b.y0())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (aa + ba - inter)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
}

impl Detection {
    pub fn new(class_id: usize, confidence: f64, bbox: BBox) -> Self {
        Self {
            bbox,
            class_id,
            confidence,
        }
    }
}

/// Formats with six significant digits, trailing zeros trimmed.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-5..6).contains(&mag) {
        return format!("{:.5e}", v);
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{:.*}", decimals, v);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `class_id cs cx cy w h`
impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {}",
            self.class_id,
            fmt_sig6(self.confidence),
            fmt_sig6(self.bbox.cx),
            fmt_sig6(self.bbox.cy),
            fmt_sig6(self.bbox.w),
            fmt_sig6(self.bbox.h)
        )
    }
}

impl FromStr for Detection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        if fields.len() != 6 {
            return config(format!("detection line needs 6 fields, got {}", fields.len()));
        }
        let class_id = fields[0]
            .parse()
            .map_err(|_| Error::Config(format!("bad class id {:?}", fields[0])))?;
        let mut v = [0.0; 5];
        for (slot, raw) in v.iter_mut().zip(&fields[1..]) {
            *slot = raw
                .parse()
                .map_err(|_| Error::Config(format!("bad number {raw:?}")))?;
        }
        Ok(Detection::new(class_id, v[0], BBox::new(v[1], v[2], v[3], v[4])))
    }
}

/// One detection per `(cell, slot)` whose combined score
/// `box confidence * best class probability` reaches `conf_thresh`.
/// Output is in cell-major, slot-minor order.
pub fn decode_grid(pred: &Tensor, layout: HeadLayout, conf_thresh: f64) -> Result<Vec<Detection>> {
    layout.check(pred)?;
    if !(0.0..=1.0).contains(&conf_thresh) {
        return config(format!("confidence threshold {conf_thresh} outside [0, 1]"));
    }
    let p = pred.data();
    let g = layout.grid as f64;
    let mut out = Vec::new();
    for row in 0..layout.grid {
        for col in 0..layout.grid {
            let co = layout.class_offset(row, col);
            let (class_id, class_p) = p[co..co + layout.classes]
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
            for slot in 0..layout.boxes {
                let o = layout.slot_offset(row, col, slot);
                let cs = (p[o + 4] * class_p).clamp(0.0, 1.0);
                if cs < conf_thresh {
                    continue;
                }
                let bbox = BBox::new(
                    (col as f64 + p[o]) / g,
                    (row as f64 + p[o + 1]) / g,
                    p[o + 2],
                    p[o + 3],
                )
                .clamped();
                out.push(Detection::new(class_id, cs, bbox));
            }
        }
    }
    Ok(out)
}

/// Greedy per-class suppression. Survivors are sorted by confidence
/// (descending), ties by class id and then by input order.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(a.cmp(&b))
    });
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(dets[i]);
        for &j in &order[pos + 1..] {
            if !suppressed[j]
                && dets[j].class_id == dets[i].class_id
                && iou(&dets[i].bbox, &dets[j].bbox) > iou_thresh
            {
                suppressed[j] = true;
            }
        }
    }
    keep
}
