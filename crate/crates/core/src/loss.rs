//! Target assignment and the sum-square detection loss.
//!
//! ```text
//! coord = λc Σ 1obj [(x - a)² + (y - b)²] + λc Σ 1obj [(√w - √ŵ)² + (√h - √ĥ)²]
//! conf  = Σ 1obj (c - ĉ)² + λn Σ 1noobj (c - ĉ)²
//! class = Σ_cells 1obj Σ_k (p(k) - p̂(k))²
//! total = coord + conf + class
//! ```

use log::warn;

use crate::detect::{iou, BBox};
use crate::error::{config, Result};
use crate::model::HeadLayout;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub coord: f64,
    pub noobj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coord: 5.0,
            noobj: 0.5,
        }
    }
}

/// Regression target for a responsible slot: cell-relative center, image-relative size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TargetBox {
    pub a: f64,
    pub b: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub layout: HeadLayout,
    /// Per `(cell, slot)`, index `cell * B + slot`.
    pub obj_mask: Vec<bool>,
    pub boxes: Vec<TargetBox>,
    pub conf: Vec<f64>,
    /// Per cell.
    pub cell_obj: Vec<bool>,
    /// Per `(cell, class)`, one-hot on object cells.
    pub class_target: Vec<f64>,
    /// Indices of truths dropped because their cell was already taken.
    pub dropped: Vec<usize>,
}

impl TargetGrid {
    pub fn empty(layout: HeadLayout) -> Self {
        let slots = layout.cells() * layout.boxes;
        Self {
            layout,
            obj_mask: vec![false; slots],
            boxes: vec![TargetBox::default(); slots],
            conf: vec![0.0; slots],
            cell_obj: vec![false; layout.cells()],
            class_target: vec![0.0; layout.cells() * layout.classes],
            dropped: Vec::new(),
        }
    }

    pub fn responsible_slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.obj_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }
}

/// Cell containing a normalized center; centers on the far edge fall in the last cell.
pub fn cell_of(cx: f64, cy: f64, grid: usize) -> (usize, usize) {
    let g = grid as f64;
    let col = ((cx * g).floor() as usize).min(grid - 1);
    let row = ((cy * g).floor() as usize).min(grid - 1);
    (row, col)
}

/// Box predicted by `slot` of cell `(row, col)`, in image coordinates.
pub fn slot_box(pred: &Tensor, layout: HeadLayout, row: usize, col: usize, slot: usize) -> BBox {
    let o = layout.slot_offset(row, col, slot);
    let p = pred.data();
    let g = layout.grid as f64;
    BBox::new((col as f64 + p[o]) / g, (row as f64 + p[o + 1]) / g, p[o + 2], p[o + 3])
}

/// Maps each truth to the cell holding its center and marks the slot whose
/// current prediction overlaps it most (lowest slot on ties) as responsible.
/// A second truth landing in an occupied cell is dropped with a warning.
pub fn assign_targets(truths: &[(usize, BBox)], layout: HeadLayout, pred: &Tensor) -> Result<TargetGrid> {
    layout.check(pred)?;
    let mut t = TargetGrid::empty(layout);
    for (idx, &(class, bbox)) in truths.iter().enumerate() {
        if class >= layout.classes {
            return config(format!("truth {idx} has class {class}, only {} classes", layout.classes));
        }
        if !bbox.is_normalized() {
            return config(format!("truth {idx} box {bbox:?} is not a valid normalized box"));
        }
        let (row, col) = cell_of(bbox.cx, bbox.cy, layout.grid);
        let cell = row * layout.grid + col;
        if t.cell_obj[cell] {
            warn!("truth {idx} shares cell ({row}, {col}) with an earlier truth; dropped");
            t.dropped.push(idx);
            continue;
        }
        let mut best = 0;
        let mut best_iou = f64::NEG_INFINITY;
        for slot in 0..layout.boxes {
            let v = iou(&slot_box(pred, layout, row, col, slot), &bbox);
            if v > best_iou {
                best_iou = v;
                best = slot;
            }
        }
        let g = layout.grid as f64;
        let s = cell * layout.boxes + best;
        t.obj_mask[s] = true;
        t.conf[s] = 1.0;
        t.boxes[s] = TargetBox {
            a: bbox.cx * g - col as f64,
            b: bbox.cy * g - row as f64,
            w: bbox.w,
            h: bbox.h,
        };
        t.cell_obj[cell] = true;
        t.class_target[cell * layout.classes + class] = 1.0;
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub coord_err: f64,
    pub iou_err: f64,
    pub cls_err: f64,
    pub total: f64,
    /// A non-positive width or height reached the square root and was clamped.
    pub degenerate: bool,
}

impl LossBreakdown {
    /// `iter coord iou cls total`
    pub fn log_line(&self, iter: usize) -> String {
        format!(
            "{iter} {:.6} {:.6} {:.6} {:.6}",
            self.coord_err, self.iou_err, self.cls_err, self.total
        )
    }

    pub fn add(&mut self, other: &LossBreakdown) {
        self.coord_err += other.coord_err;
        self.iou_err += other.iou_err;
        self.cls_err += other.cls_err;
        self.total += other.total;
        self.degenerate |= other.degenerate;
    }

    pub fn scaled(&self, f: f64) -> LossBreakdown {
        LossBreakdown {
            coord_err: self.coord_err * f,
            iou_err: self.iou_err * f,
            cls_err: self.cls_err * f,
            total: self.total * f,
            degenerate: self.degenerate,
        }
    }
}

pub fn detection_loss(pred: &Tensor, targets: &TargetGrid, weights: LossWeights) -> Result<LossBreakdown> {
    evaluate(pred, targets, weights, None)
}

/// Loss plus its gradient with respect to every entry of `pred`.
pub fn detection_loss_grad(pred: &Tensor, targets: &TargetGrid, weights: LossWeights) -> Result<(LossBreakdown, Tensor)> {
    let mut grad = Tensor::zeros(pred.shape());
    let loss = evaluate(pred, targets, weights, Some(&mut grad))?;
    Ok((loss, grad))
}

fn evaluate(
    pred: &Tensor,
    t: &TargetGrid,
    wts: LossWeights,
    mut grad: Option<&mut Tensor>,
) -> Result<LossBreakdown> {
    let layout = t.layout;
    layout.check(pred)?;
    let p = pred.data();
    let mut center = 0.0;
    let mut size = 0.0;
    let mut conf_obj = 0.0;
    let mut conf_noobj = 0.0;
    let mut cls = 0.0;
    let mut degenerate = false;
    let mut put = |i: usize, v: f64| {
        if let Some(g) = grad.as_deref_mut() {
            g.data_mut()[i] += v;
        }
    };
    for row in 0..layout.grid {
        for col in 0..layout.grid {
            let cell = row * layout.grid + col;
            for slot in 0..layout.boxes {
                let s = cell * layout.boxes + slot;
                let o = layout.slot_offset(row, col, slot);
                let c = p[o + 4];
                let dc = c - t.conf[s];
                if t.obj_mask[s] {
                    let tb = t.boxes[s];
                    let (dx, dy) = (p[o] - tb.a, p[o + 1] - tb.b);
                    center += dx * dx + dy * dy;
                    put(o, 2.0 * wts.coord * dx);
                    put(o + 1, 2.0 * wts.coord * dy);
                    for (k, target) in [(2, tb.w), (3, tb.h)] {
                        let v = p[o + k];
                        let sv = if v > 0.0 { v.sqrt() } else { 0.0 };
                        let st = if target > 0.0 { target.sqrt() } else { 0.0 };
                        if v <= 0.0 || target < 0.0 {
                            degenerate = true;
                        }
                        let d = sv - st;
                        size += d * d;
                        if v > 0.0 {
                            put(o + k, wts.coord * d / sv);
                        }
                    }
                    conf_obj += dc * dc;
                    put(o + 4, 2.0 * dc);
                } else {
                    conf_noobj += dc * dc;
                    put(o + 4, 2.0 * wts.noobj * dc);
                }
            }
            if t.cell_obj[cell] {
                let co = layout.class_offset(row, col);
                for k in 0..layout.classes {
                    let d = p[co + k] - t.class_target[cell * layout.classes + k];
                    cls += d * d;
                    put(co + k, 2.0 * d);
                }
            }
        }
    }
    let coord_err = wts.coord * center + wts.coord * size;
    let iou_err = conf_obj + wts.noobj * conf_noobj;
    Ok(LossBreakdown {
        coord_err,
        iou_err,
        cls_err: cls,
        total: coord_err + iou_err + cls,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layout(g: usize, b: usize, c: usize) -> HeadLayout {
        HeadLayout {
            grid: g,
            boxes: b,
            classes: c,
        }
    }

    fn random_pred(l: HeadLayout, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = l.cells() * l.depth();
        Tensor::from_vec(&[l.grid, l.grid, l.depth()], (0..n).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap()
    }

    /// Writes the targets into a prediction so every masked term vanishes.
    fn pred_matching(t: &TargetGrid, base: &Tensor) -> Tensor {
        let l = t.layout;
        let mut p = base.clone();
        let d = p.data_mut();
        for row in 0..l.grid {
            for col in 0..l.grid {
                let cell = row * l.grid + col;
                for slot in 0..l.boxes {
                    let s = cell * l.boxes + slot;
                    let o = l.slot_offset(row, col, slot);
                    d[o + 4] = t.conf[s];
                    if t.obj_mask[s] {
                        let tb = t.boxes[s];
                        d[o] = tb.a;
                        d[o + 1] = tb.b;
                        d[o + 2] = tb.w;
                        d[o + 3] = tb.h;
                    }
                }
                if t.cell_obj[cell] {
                    let co = l.class_offset(row, col);
                    for k in 0..l.classes {
                        d[co + k] = t.class_target[cell * l.classes + k];
                    }
                }
            }
        }
        p
    }

    #[test]
    fn no_truths_no_masks() {
        let l = layout(3, 2, 3);
        let t = assign_targets(&[], l, &random_pred(l, 1)).unwrap();
        assert!(t.obj_mask.iter().all(|m| !m));
        assert!(t.cell_obj.iter().all(|m| !m));
    }

    #[test]
    fn center_in_cell_rule() {
        let l = layout(2, 2, 3);
        let t = assign_targets(&[(1, BBox::new(0.25, 0.25, 0.2, 0.2))], l, &random_pred(l, 2)).unwrap();
        assert!(t.cell_obj[0]);
        assert_eq!(t.cell_obj.iter().filter(|&&m| m).count(), 1);
        assert_eq!(t.class_target[..3], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn same_cell_collision_keeps_first() {
        let l = layout(2, 2, 3);
        let truths = [(0, BBox::new(0.2, 0.2, 0.1, 0.1)), (2, BBox::new(0.3, 0.3, 0.1, 0.1))];
        let t = assign_targets(&truths, l, &random_pred(l, 3)).unwrap();
        assert_eq!(t.dropped, vec![1]);
        assert_eq!(t.class_target[..3], [1.0, 0.0, 0.0]);
        assert_eq!(t.responsible_slots().count(), 1);
    }

    #[test]
    fn assignment_matches_exhaustive_argmax() {
        let l = layout(4, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..50 {
            let pred = random_pred(l, 100 + trial);
            // three truths in distinct cells
            let mut truths: Vec<(usize, BBox)> = Vec::new();
            while truths.len() < 3 {
                let b = BBox::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.05..0.6), rng.gen_range(0.05..0.6));
                if truths.iter().all(|(_, o)| cell_of(o.cx, o.cy, 4) != cell_of(b.cx, b.cy, 4)) {
                    truths.push((rng.gen_range(0..3), b));
                }
            }
            let t = assign_targets(&truths, l, &pred).unwrap();
            let mut expected = vec![false; 32];
            for (_, b) in &truths {
                // scan every slot of the grid, keep those in the truth's cell
                let mut best: Option<(usize, f64)> = None;
                for s in 0..32 {
                    let (cell, slot) = (s / 2, s % 2);
                    let (row, col) = (cell / 4, cell % 4);
                    if (row, col) != cell_of(b.cx, b.cy, 4) {
                        continue;
                    }
                    let v = iou(&slot_box(&pred, l, row, col, slot), b);
                    if best.map_or(true, |(_, bv)| v > bv) {
                        best = Some((s, v));
                    }
                }
                expected[best.unwrap().0] = true;
            }
            assert_eq!(t.obj_mask, expected);
        }
    }

    #[test]
    fn perfect_prediction_zero_loss() {
        let l = layout(3, 2, 3);
        let base = random_pred(l, 4);
        let truths = [(0, BBox::new(0.1, 0.1, 0.3, 0.2)), (2, BBox::new(0.8, 0.5, 0.4, 0.5))];
        let t = assign_targets(&truths, l, &base).unwrap();
        let p = pred_matching(&t, &base);
        let loss = detection_loss(&p, &t, LossWeights::default()).unwrap();
        assert!(loss.coord_err.abs() < 1e-24);
        assert!(loss.cls_err.abs() < 1e-24);
        assert!(loss.iou_err.abs() < 1e-24);
        assert_eq!(loss.total, 0.0);
    }

    #[test]
    fn center_offset_hand_value() {
        let l = layout(2, 1, 1);
        let base = random_pred(l, 5);
        let t = assign_targets(&[(0, BBox::new(0.3, 0.3, 0.2, 0.2))], l, &base).unwrap();
        let mut p = pred_matching(&t, &base);
        p.data_mut()[0] += 0.5;
        let loss = detection_loss(&p, &t, LossWeights::default()).unwrap();
        assert!((loss.coord_err - 1.25).abs() < 1e-12);
        assert!(loss.iou_err.abs() < 1e-24 && loss.cls_err.abs() < 1e-24);
    }

    #[test]
    fn empty_image_noobj_hand_value() {
        let (g, b) = (3, 2);
        let l = layout(g, b, 3);
        let p = Tensor::filled(&[g, g, l.depth()], 0.5);
        let t = assign_targets(&[], l, &p).unwrap();
        let loss = detection_loss(&p, &t, LossWeights::default()).unwrap();
        assert!((loss.total - 0.5 * (g * g * b) as f64 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_size_is_flagged() {
        let l = layout(1, 1, 1);
        let mut p = Tensor::filled(&[1, 1, 6], 0.5);
        let t = assign_targets(&[(0, BBox::new(0.5, 0.5, 0.4, 0.4))], l, &p).unwrap();
        p.data_mut()[2] = -0.1;
        let (loss, grad) = detection_loss_grad(&p, &t, LossWeights::default()).unwrap();
        assert!(loss.degenerate);
        assert!(loss.total.is_finite());
        assert_eq!(grad.data()[2], 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let l = layout(3, 2, 3);
        let p = random_pred(l, 6);
        let truths = [(0, BBox::new(0.1, 0.1, 0.3, 0.2)), (2, BBox::new(0.8, 0.5, 0.4, 0.5))];
        let t = assign_targets(&truths, l, &p).unwrap();
        let (_, grad) = detection_loss_grad(&p, &t, LossWeights::default()).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.data_mut()[i] += h;
            b.data_mut()[i] -= h;
            let fd = (detection_loss(&a, &t, LossWeights::default()).unwrap().total
                - detection_loss(&b, &t, LossWeights::default()).unwrap().total)
                / (2.0 * h);
            assert!((fd - grad.data()[i]).abs() < 1e-6, "entry {i}");
        }
    }

    #[test]
    fn log_line_format() {
        let lb = LossBreakdown {
            coord_err: 1.0,
            iou_err: 0.5,
            cls_err: 0.25,
            total: 1.75,
            degenerate: false,
        };
        assert_eq!(lb.log_line(7), "7 1.000000 0.500000 0.250000 1.750000");
    }

    proptest! {
        #[test]
        fn nonnegative_and_doubling_coord(seed in 0u64..1000, cx in 0.0..1.0f64, cy in 0.0..1.0f64, k in 0usize..3) {
            let l = layout(3, 2, 3);
            let p = random_pred(l, seed);
            let t = assign_targets(&[(k, BBox::new(cx, cy, 0.3, 0.3))], l, &p).unwrap();
            let w = LossWeights::default();
            let a = detection_loss(&p, &t, w).unwrap();
            let b = detection_loss(&p, &t, LossWeights { coord: 2.0 * w.coord, ..w }).unwrap();
            prop_assert!(a.total >= 0.0 && a.coord_err >= 0.0 && a.iou_err >= 0.0 && a.cls_err >= 0.0);
            prop_assert_eq!(a.total, a.coord_err + a.iou_err + a.cls_err);
            prop_assert_eq!(b.coord_err, 2.0 * a.coord_err);
            prop_assert_eq!(b.iou_err, a.iou_err);
            prop_assert_eq!(b.cls_err, a.cls_err);
        }

        #[test]
        fn permuting_free_slots_keeps_loss(seed in 0u64..1000, cx in 0.0..1.0f64, cy in 0.0..1.0f64) {
            let l = layout(2, 3, 2);
            let p = random_pred(l, seed);
            let t = assign_targets(&[(1, BBox::new(cx, cy, 0.3, 0.3))], l, &p).unwrap();
            let base = detection_loss(&p, &t, LossWeights::default()).unwrap();
            let (row, col) = cell_of(cx, cy, 2);
            let free: Vec<usize> = (0..3).filter(|&s| !t.obj_mask[(row * 2 + col) * 3 + s]).collect();
            let mut q = p.clone();
            let (s0, s1) = (l.slot_offset(row, col, free[0]), l.slot_offset(row, col, free[1]));
            for k in 0..5 {
                q.data_mut().swap(s0 + k, s1 + k);
            }
            let swapped = detection_loss(&q, &t, LossWeights::default()).unwrap();
            prop_assert!((swapped.total - base.total).abs() < 1e-12);
        }
    }
}
