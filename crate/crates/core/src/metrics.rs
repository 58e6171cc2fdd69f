//! Centroid-rule matching, count-based scores, average precision and latency timing.
//!
//! Scores are percentages. A score whose denominator is zero is reported as 0 with
//! `defined == false` rather than as an error.

use std::fmt::Write as _;
use std::time::Instant;

use crate::detect::{decode_grid, nms, BBox, Detection};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Frames in which this class had neither truths nor detections.
    pub tn: usize,
}

impl ClassCounts {
    pub fn add(&mut self, other: &ClassCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub per_class: Vec<ClassCounts>,
}

impl MatchResult {
    pub fn new(num_classes: usize) -> Self {
        Self { per_class: vec![ClassCounts::default(); num_classes] }
    }

    pub fn merge(&mut self, other: &MatchResult) {
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.add(b);
        }
    }

    pub fn total(&self) -> ClassCounts {
        let mut t = ClassCounts::default();
        for c in &self.per_class {
            t.add(c);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    /// Centroid inside a truth that an earlier detection already claimed.
    Duplicate,
    FalsePositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchOptions {
    /// Count duplicates as false positives.
    pub strict: bool,
}

fn confidence_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    order
}

/// Labels every detection of one frame under the centroid rule, visiting detections
/// in descending confidence. Returns outcomes in input order and the claimed flag per truth.
pub fn label_frame(dets: &[Detection], truths: &[(usize, BBox)]) -> (Vec<Outcome>, Vec<bool>) {
    let mut claimed = vec![false; truths.len()];
    let mut outcomes = vec![Outcome::FalsePositive; dets.len()];
    for i in confidence_order(dets) {
        let d = &dets[i];
        let (cx, cy) = (d.bbox.cx, d.bbox.cy);
        let mut best: Option<(usize, f64)> = None;
        let mut covered = false;
        for (j, (class, t)) in truths.iter().enumerate() {
            if *class != d.class_id || !t.contains(cx, cy) {
                continue;
            }
            covered = true;
            if claimed[j] {
                continue;
            }
            let dist = (t.cx - cx).powi(2) + (t.cy - cy).powi(2);
            if best.map_or(true, |(_, bd)| dist < bd) {
                best = Some((j, dist));
            }
        }
        outcomes[i] = match best {
            Some((j, _)) => {
                claimed[j] = true;
                Outcome::TruePositive
            }
            None if covered => Outcome::Duplicate,
            None => Outcome::FalsePositive,
        };
    }
    (outcomes, claimed)
}

/// Counts one frame. Classes outside `0..num_classes` are ignored.
pub fn match_detections(
    dets: &[Detection],
    truths: &[(usize, BBox)],
    num_classes: usize,
    opts: MatchOptions,
) -> MatchResult {
    let (outcomes, claimed) = label_frame(dets, truths);
    let mut r = MatchResult::new(num_classes);
    for (d, o) in dets.iter().zip(&outcomes) {
        let Some(c) = r.per_class.get_mut(d.class_id) else { continue };
        match o {
            Outcome::TruePositive => c.tp += 1,
            Outcome::FalsePositive => c.fp += 1,
            Outcome::Duplicate if opts.strict => c.fp += 1,
            Outcome::Duplicate => {}
        }
    }
    for ((class, _), taken) in truths.iter().zip(&claimed) {
        if let (Some(c), false) = (r.per_class.get_mut(*class), taken) {
            c.fn_ += 1;
        }
    }
    for (k, c) in r.per_class.iter_mut().enumerate() {
        let any_truth = truths.iter().any(|(class, _)| *class == k);
        let any_det = dets.iter().any(|d| d.class_id == k);
        if !any_truth && !any_det {
            c.tn += 1;
        }
    }
    r
}

/// A percentage plus whether its denominator was nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub defined: bool,
}

impl Score {
    fn ratio(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Self { value: 100.0 * num / den, defined: true }
        } else {
            Self { value: 0.0, defined: false }
        }
    }
}

pub fn precision(tp: usize, fp: usize) -> Score {
    Score::ratio(tp as f64, (tp + fp) as f64)
}

pub fn sensitivity(tp: usize, fn_: usize) -> Score {
    Score::ratio(tp as f64, (tp + fn_) as f64)
}

/// Harmonic mean of two percentages.
pub fn f1(pre: f64, sen: f64) -> f64 {
    if pre + sen <= 0.0 {
        return 0.0;
    }
    2.0 * sen * pre / (sen + pre)
}

/// Recall-weighted F-beta with beta = 2, in percent.
pub fn f2(pre: f64, sen: f64) -> f64 {
    if 4.0 * pre + sen <= 0.0 {
        return 0.0;
    }
    5.0 * pre * sen / (4.0 * pre + sen)
}

pub fn dice(tp: usize, fp: usize, fn_: usize) -> Score {
    Score::ratio(2.0 * tp as f64, (2 * tp + fp + fn_) as f64)
}

/// Micro-averaged TP / (TP + FP + FN) over all classes, in percent.
pub fn accuracy(result: &MatchResult) -> Score {
    let t = result.total();
    Score::ratio(t.tp as f64, (t.tp + t.fp + t.fn_) as f64)
}

/// One evaluated frame: its detections and its truths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub dets: Vec<Detection>,
    pub truths: Vec<(usize, BBox)>,
}

/// All-points interpolated average precision for one class, in percent.
///
/// Returns `None` when the class has no truths. Precision/recall points are taken
/// after each group of equal confidences, so tied scores enter together.
pub fn average_precision(frames: &[Frame], class: usize, opts: MatchOptions) -> Option<f64> {
    let n_truth: usize = frames.iter().map(|f| f.truths.iter().filter(|(c, _)| *c == class).count()).sum();
    if n_truth == 0 {
        return None;
    }
    let mut scored: Vec<(f64, Outcome)> = Vec::new();
    for f in frames {
        let (outcomes, _) = label_frame(&f.dets, &f.truths);
        for (d, o) in f.dets.iter().zip(outcomes) {
            if d.class_id == class {
                scored.push((d.confidence, o));
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let conf = scored[i].0;
        while i < scored.len() && scored[i].0 == conf {
            match scored[i].1 {
                Outcome::TruePositive => tp += 1,
                Outcome::FalsePositive => fp += 1,
                Outcome::Duplicate if opts.strict => fp += 1,
                Outcome::Duplicate => {}
            }
            i += 1;
        }
        if tp + fp > 0 {
            points.push((tp as f64 / n_truth as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    Some(100.0 * interpolated_area(&points))
}

/// Area under the monotone precision envelope of `(recall, precision)` points.
fn interpolated_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(r, _)) in points.iter().enumerate() {
        if r > prev_recall {
            let envelope = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
            area += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    area
}

/// Mean of the defined per-class APs, plus the classes that were excluded.
pub fn mean_average_precision(aps: &[Option<f64>]) -> (f64, Vec<usize>) {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    let excluded = aps.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(i, _)| i).collect();
    let mean = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    (mean, excluded)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub counts: ClassCounts,
    pub precision: Score,
    pub sensitivity: Score,
    pub f1: f64,
    pub f2: f64,
    pub dice: Score,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub map: f64,
    pub map_excluded: Vec<usize>,
    pub accuracy: Score,
    pub mean_latency: Option<f64>,
}

impl MetricsReport {
    pub fn evaluate(frames: &[Frame], class_names: &[&str], opts: MatchOptions) -> Self {
        let n = class_names.len();
        let mut total = MatchResult::new(n);
        for f in frames {
            total.merge(&match_detections(&f.dets, &f.truths, n, opts));
        }
        let aps: Vec<Option<f64>> = (0..n).map(|c| average_precision(frames, c, opts)).collect();
        let (map, map_excluded) = mean_average_precision(&aps);
        let classes = class_names
            .iter()
            .zip(&total.per_class)
            .zip(&aps)
            .map(|((name, c), ap)| {
                let pre = precision(c.tp, c.fp);
                let sen = sensitivity(c.tp, c.fn_);
                ClassMetrics {
                    name: name.to_string(),
                    counts: *c,
                    precision: pre,
                    sensitivity: sen,
                    f1: f1(pre.value, sen.value),
                    f2: f2(pre.value, sen.value),
                    dice: dice(c.tp, c.fp, c.fn_),
                    ap: *ap,
                }
            })
            .collect();
        Self { classes, map, map_excluded, accuracy: accuracy(&total), mean_latency: None }
    }

    /// Aligned table, one row per class. Undefined scores carry a `*`.
    pub fn table(&self) -> String {
        let mark = |s: Score| format!("{:>7.2}{}", s.value, if s.defined { " " } else { "*" });
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>5} {:>5} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "class", "TP", "FP", "FN", "TN", "Pre", "Sen", "F1", "F2", "Dice", "AP"
        );
        for c in &self.classes {
            let ap = c.ap.map_or("     n/a ".to_string(), |a| format!("{a:>7.2}  "));
            let _ = writeln!(
                out,
                "{:<12} {:>5} {:>5} {:>5} {:>5} {} {} {:>7.2}  {:>7.2}  {} {}",
                c.name,
                c.counts.tp,
                c.counts.fp,
                c.counts.fn_,
                c.counts.tn,
                mark(c.precision),
                mark(c.sensitivity),
                c.f1,
                c.f2,
                mark(c.dice),
                ap
            );
        }
        let _ = writeln!(out, "mAP {:.2}", self.map);
        let _ = writeln!(out, "accuracy {:.2} (micro TP/(TP+FP+FN) over all classes)", self.accuracy.value);
        if let Some(l) = self.mean_latency {
            let _ = writeln!(out, "mean latency {:.3} ms", l * 1e3);
        }
        if self.classes.iter().any(|c| !c.precision.defined || !c.sensitivity.defined || !c.dice.defined) {
            let _ = writeln!(out, "* zero denominator, reported as 0");
        }
        out
    }

    /// Machine-readable `class metric value` lines.
    pub fn lines(&self) -> String {
        let mut out = String::new();
        for c in &self.classes {
            let n = &c.name;
            for (k, v) in [
                ("tp", c.counts.tp as f64),
                ("fp", c.counts.fp as f64),
                ("fn", c.counts.fn_ as f64),
                ("tn", c.counts.tn as f64),
                ("pre", c.precision.value),
                ("sen", c.sensitivity.value),
                ("f1", c.f1),
                ("f2", c.f2),
                ("dice", c.dice.value),
            ] {
                let _ = writeln!(out, "{n} {k} {v}");
            }
            if let Some(ap) = c.ap {
                let _ = writeln!(out, "{n} ap {ap}");
            }
        }
        let _ = writeln!(out, "all map {}", self.map);
        let _ = writeln!(out, "all accuracy {}", self.accuracy.value);
        if let Some(l) = self.mean_latency {
            let _ = writeln!(out, "all latency_s {l}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

/// Times forward + decode + NMS per image. `warmup` passes over the images run first and are not timed.
pub fn bench_latency(
    net: &Network,
    images: &[Tensor],
    repetitions: usize,
    warmup: usize,
    conf_thresh: f64,
    nms_thresh: f64,
) -> Result<LatencyStats> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    if images.is_empty() {
        return Err(Error::Config("no images to benchmark".into()));
    }
    let layout = net.layout();
    let run = |img: &Tensor| -> Result<usize> {
        let out = net.forward(img)?;
        Ok(nms(&decode_grid(&out, layout, conf_thresh)?, nms_thresh).len())
    };
    for _ in 0..warmup {
        for img in images {
            std::hint::black_box(run(img)?);
        }
    }
    let mut times = Vec::with_capacity(repetitions * images.len());
    for _ in 0..repetitions {
        for img in images {
            let t = Instant::now();
            std::hint::black_box(run(img)?);
            times.push(t.elapsed().as_secs_f64());
        }
    }
    let sum: f64 = times.iter().sum();
    Ok(LatencyStats {
        mean: sum / times.len() as f64,
        min: times.iter().copied().fold(f64::INFINITY, f64::min),
        max: times.iter().copied().fold(0.0, f64::max),
        runs: times.len(),
    })
}
