//! Mini-batch training with checkpoints and validation mAP.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::{augment, resize, rng_for, AugmentConfig, RoadClass, Sample};
use crate::detect::{decode_grid, nms, DEFAULT_NMS_THRESH};
use crate::error::{Error, Result};
use crate::loss::{assign_targets, detection_loss, detection_loss_grad, LossBreakdown, LossWeights};
use crate::metrics::{average_precision, mean_average_precision, Frame, MatchOptions};
use crate::model::{save_weights, Network};
use crate::nn::{sgd_step, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub train: TrainConfig,
    /// Color jitter applied to every drawn sample; `None` trains on the images as stored.
    pub augment: Option<AugmentConfig>,
    pub loss: LossWeights,
    pub checkpoint_every: usize,
    /// Window length for the stalled-loss warning.
    pub patience: usize,
    /// Detection threshold used when scoring validation mAP.
    pub eval_conf_thresh: f64,
    pub nms_thresh: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            train: TrainConfig::desk(),
            augment: Some(AugmentConfig::full_scale()),
            loss: LossWeights::default(),
            checkpoint_every: 1000,
            patience: 500,
            eval_conf_thresh: 0.005,
            nms_thresh: DEFAULT_NMS_THRESH,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if self.checkpoint_every == 0 || self.patience == 0 {
            return Err(Error::Config("checkpoint interval and patience must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub path: Option<PathBuf>,
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub losses: Vec<LossBreakdown>,
    pub checkpoints: Vec<Checkpoint>,
    /// Iteration and mAP of the best checkpoint.
    pub best: Option<(usize, f64)>,
    pub stall_warnings: usize,
}

pub struct Trainer {
    pub net: Network,
    pub opts: TrainOptions,
    iteration: usize,
}

impl Trainer {
    pub fn new(net: Network, opts: TrainOptions) -> Result<Self> {
        opts.validate()?;
        if net.config().input_size != opts.train.input_size {
            return Err(Error::Config(format!(
                "network input {} differs from training input {}",
                net.config().input_size,
                opts.train.input_size
            )));
        }
        Ok(Self { net, opts, iteration: 0 })
    }

    /// Continue counting from `iteration`, e.g. after loading a checkpoint.
    pub fn resume_at(&mut self, iteration: usize) {
        self.iteration = iteration;
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draws `batch_size` samples with replacement, resized and jittered. The draw
    /// depends only on the seed and iteration number.
    pub fn draw_batch(&self, data: &[Sample]) -> Result<Vec<Sample>> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let mut rng = rng_for(self.opts.seed, &format!("batch{}", self.iteration));
        let size = self.opts.train.input_size;
        (0..self.opts.train.batch_size)
            .map(|_| {
                let s = &data[rng.gen_range(0..data.len())];
                let s = if s.width() == size && s.height() == size { s.clone() } else { resize(s, size)? };
                Ok(match &self.opts.augment {
                    Some(cfg) => augment(&s, cfg, &mut rng),
                    None => s,
                })
            })
            .collect()
    }

    /// One SGD update on `batch`, processed in `subdivisions` chunks. Gradients are
    /// averaged over the batch; the returned loss is the per-image mean.
    pub fn step(&mut self, batch: &[Sample]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        self.net.zero_grad();
        let mut total = LossBreakdown::default();
        let layout = self.net.layout();
        for chunk in batch.chunks(self.opts.train.minibatch_size().max(1)) {
            for s in chunk {
                let pred = self.net.forward_train(&s.image)?;
                let targets = assign_targets(&s.truths(), layout, &pred)?;
                let (loss, grad) = detection_loss_grad(&pred, &targets, self.opts.loss)?;
                self.net.backward(&grad)?;
                total.add(&loss);
            }
        }
        let scale = 1.0 / batch.len() as f64;
        self.net.scale_grads(scale);
        sgd_step(self.net.params_mut(), &self.opts.train);
        self.iteration += 1;
        Ok(total.scaled(scale))
    }

    /// Mean per-image loss without updating anything.
    pub fn loss_on(&self, samples: &[Sample]) -> Result<LossBreakdown> {
        let mut total = LossBreakdown::default();
        for s in samples {
            let pred = self.net.forward(&s.image)?;
            let targets = assign_targets(&s.truths(), self.net.layout(), &pred)?;
            total.add(&detection_loss(&pred, &targets, self.opts.loss)?);
        }
        Ok(total.scaled(1.0 / samples.len().max(1) as f64))
    }

    /// Trains up to the configured iteration count. With `out_dir`, writes `loss.log`,
    /// `ckpt_NNNNNN.rhwt` checkpoints, `best.rhwt` and `final.rhwt`.
    pub fn run(&mut self, train: &[Sample], val: &[Sample], out_dir: Option<&Path>) -> Result<TrainSummary> {
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("loss.log");
                // A resumed run continues the existing log.
                let fresh = self.iteration == 0 || !path.exists();
                let file = fs::OpenOptions::new().create(true).write(true).append(!fresh).truncate(fresh).open(path)?;
                let mut w = BufWriter::new(file);
                if fresh {
                    writeln!(w, "# iter coord iou cls total")?;
                }
                Some(w)
            }
            None => None,
        };
        let mut summary = TrainSummary { losses: Vec::new(), checkpoints: Vec::new(), best: None, stall_warnings: 0 };
        let patience = self.opts.patience;
        let mut prev_window: Option<f64> = None;

        while self.iteration < self.opts.train.iterations {
            let batch = self.draw_batch(train)?;
            let loss = self.step(&batch)?;
            if loss.degenerate {
                log::debug!("iteration {}: clamped a non-positive box size", self.iteration);
            }
            if let Some(l) = log.as_mut() {
                writeln!(l, "{}", loss.log_line(self.iteration))?;
            }
            summary.losses.push(loss);

            if summary.losses.len() % patience == 0 {
                let n = summary.losses.len();
                let window = summary.losses[n - patience..].iter().map(|l| l.total).sum::<f64>() / patience as f64;
                if prev_window.is_some_and(|p| window >= p) {
                    summary.stall_warnings += 1;
                    log::warn!("loss has not decreased over the last {patience} iterations (mean {window:.4})");
                }
                prev_window = Some(window);
            }

            if self.iteration % self.opts.checkpoint_every == 0 {
                let path = out_dir.map(|d| d.join(format!("ckpt_{:06}.rhwt", self.iteration)));
                if let Some(p) = &path {
                    save_weights(&self.net, p)?;
                }
                let val_map = if val.is_empty() { None } else { Some(self.validation_map(val)?) };
                log::info!(
                    "iteration {} loss {:.4} val mAP {}",
                    self.iteration,
                    loss.total,
                    val_map.map_or("n/a".to_string(), |m| format!("{m:.2}"))
                );
                if let Some(m) = val_map {
                    if summary.best.map_or(true, |(_, b)| m > b) {
                        summary.best = Some((self.iteration, m));
                        if let (Some(dir), Some(p)) = (out_dir, &path) {
                            fs::copy(p, dir.join("best.rhwt"))?;
                            fs::write(dir.join("best.txt"), format!("{} {}\n", self.iteration, m))?;
                        }
                    }
                }
                summary.checkpoints.push(Checkpoint { iteration: self.iteration, path, val_map });
            }
        }
        if let Some(mut l) = log {
            l.flush()?;
        }
        if let Some(dir) = out_dir {
            save_weights(&self.net, dir.join("final.rhwt"))?;
        }
        Ok(summary)
    }

    pub fn validation_map(&self, val: &[Sample]) -> Result<f64> {
        let frames = detect_frames(&self.net, val, self.opts.eval_conf_thresh, self.opts.nms_thresh)?;
        let aps: Vec<Option<f64>> = (0..self.net.config().num_classes)
            .map(|c| average_precision(&frames, c, MatchOptions::default()))
            .collect();
        Ok(mean_average_precision(&aps).0)
    }
}

/// Runs the network over samples (resizing as needed) and pairs detections with truths.
pub fn detect_frames(net: &Network, samples: &[Sample], conf_thresh: f64, nms_thresh: f64) -> Result<Vec<Frame>> {
    let size = net.config().input_size;
    samples
        .iter()
        .map(|s| {
            let img = if s.width() == size && s.height() == size {
                s.image.clone()
            } else {
                resize(s, size)?.image
            };
            let out = net.forward(&img)?;
            let dets = nms(&decode_grid(&out, net.layout(), conf_thresh)?, nms_thresh);
            Ok(Frame { dets, truths: s.truths() })
        })
        .collect()
}

pub fn class_names() -> Vec<&'static str> {
    RoadClass::ALL.iter().map(|c| c.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Annotation, CameraModel, Pose, SceneSpec, generate_scene, Defect, DefectKind};
    use crate::detect::BBox;
    use crate::model::{NetworkConfig, Variant};

    fn tiny_net(seed: u64) -> Network {
        Network::new(NetworkConfig::preset_scaled(Variant::Improved, 3, 2, 64, 2).unwrap(), seed).unwrap()
    }

    fn opts(iterations: usize) -> TrainOptions {
        TrainOptions {
            train: TrainConfig { input_size: 64, batch_size: 2, iterations, ..TrainConfig::desk() },
            checkpoint_every: 5,
            patience: 5,
            ..Default::default()
        }
    }

    fn sample() -> Sample {
        let mut spec = SceneSpec::straight(30.0, 2);
        spec.defects.push(Defect { kind: DefectKind::Pothole, x: 5.0, y: 0.6, size: 0.8, angle: 0.0 });
        let cam = CameraModel { size: 64, ..CameraModel::default() };
        generate_scene(&spec, &cam, &Pose::new(0.0, 0.0, 3.0, 0.0)).unwrap()
    }

    #[test]
    fn batches_are_reproducible() {
        let t = Trainer::new(tiny_net(1), opts(3)).unwrap();
        let data = vec![sample()];
        assert_eq!(t.draw_batch(&data).unwrap(), t.draw_batch(&data).unwrap());
    }

    #[test]
    fn run_writes_checkpoints_and_logs() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(tiny_net(1), opts(10)).unwrap();
        let data = vec![sample()];
        let summary = t.run(&data, &data, Some(dir.path())).unwrap();
        assert_eq!(summary.losses.len(), 10);
        assert_eq!(summary.checkpoints.len(), 2);
        assert!(summary.best.is_some());
        for f in ["loss.log", "ckpt_000005.rhwt", "ckpt_000010.rhwt", "best.rhwt", "best.txt", "final.rhwt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let log = fs::read_to_string(dir.path().join("loss.log")).unwrap();
        assert_eq!(log.lines().count(), 11);
    }

    #[test]
    fn mismatched_input_size_is_rejected() {
        let o = TrainOptions { train: TrainConfig { input_size: 128, ..TrainConfig::desk() }, ..Default::default() };
        assert!(Trainer::new(tiny_net(1), o).is_err());
    }

    #[test]
    fn detect_frames_pairs_truths() {
        let s = Sample {
            id: "x".into(),
            image: crate::tensor::Tensor::zeros(&[3, 32, 32]),
            annotations: vec![Annotation::new(RoadClass::Cracks, BBox::new(0.5, 0.5, 0.2, 0.2))],
        };
        let frames = detect_frames(&tiny_net(3), &[s], 0.9, 0.45).unwrap();
        assert_eq!(frames[0].truths.len(), 1);
    }
}
