use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape, Error, Result};
use crate::nn::activation::sigmoid;
use crate::nn::{
    activate, activate_backward, conv2d, conv2d_backward, maxpool2d_backward,
    maxpool2d_with_indices, Activation, Param,
};
use crate::tensor::Tensor;

use super::config::{LayerKind, NetworkConfig, Variant};

/// Raw `w`/`h` logits are clamped to this magnitude before exponentiation.
pub const SIZE_LOGIT_LIMIT: f64 = 10.0;

/// Indexing helper for the `[g, g, B*5 + C]` prediction tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub grid: usize,
    pub boxes: usize,
    pub classes: usize,
}

impl HeadLayout {
    pub fn depth(&self) -> usize {
        self.boxes * 5 + self.classes
    }

    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    /// Offset of a cell's first entry; cells are row-major.
    pub fn cell_offset(&self, row: usize, col: usize) -> usize {
        (row * self.grid + col) * self.depth()
    }

    /// Offset of `[x, y, w, h, conf]` for box slot `slot` of a cell.
    pub fn slot_offset(&self, row: usize, col: usize, slot: usize) -> usize {
        self.cell_offset(row, col) + slot * 5
    }

    pub fn class_offset(&self, row: usize, col: usize) -> usize {
        self.cell_offset(row, col) + self.boxes * 5
    }

    pub fn check(&self, pred: &Tensor) -> Result<()> {
        if pred.shape() != [self.grid, self.grid, self.depth()] {
            return shape(format!(
                "prediction shape {:?} does not match grid {} with depth {}",
                pred.shape(),
                self.grid,
                self.depth()
            ));
        }
        Ok(())
    }

    fn is_size_entry(&self, d: usize) -> bool {
        d < self.boxes * 5 && matches!(d % 5, 2 | 3)
    }
}

impl From<&NetworkConfig> for HeadLayout {
    fn from(cfg: &NetworkConfig) -> Self {
        Self {
            grid: cfg.grid_size,
            boxes: cfg.boxes_per_cell,
            classes: cfg.num_classes,
        }
    }
}

/// Squashes raw head activations `[D, g, g]` into predictions `[g, g, D]`:
/// logistic on x, y, confidence and class scores; `exp(t) / g` on w and h.
pub fn squash_head(raw: &Tensor, layout: HeadLayout) -> Result<Tensor> {
    let (d, g) = (layout.depth(), layout.grid);
    if raw.shape() != [d, g, g] {
        return shape(format!("raw head {:?} is not [{d}, {g}, {g}]", raw.shape()));
    }
    let mut out = Tensor::zeros(&[g, g, d]);
    let o = out.data_mut();
    for ch in 0..d {
        for row in 0..g {
            for col in 0..g {
                let r = raw.at3(ch, row, col);
                o[layout.cell_offset(row, col) + ch] = if layout.is_size_entry(ch) {
                    r.clamp(-SIZE_LOGIT_LIMIT, SIZE_LOGIT_LIMIT).exp() / g as f64
                } else {
                    sigmoid(r)
                };
            }
        }
    }
    Ok(out)
}

fn squash_head_backward(raw: &Tensor, out: &Tensor, grad: &Tensor, layout: HeadLayout) -> Tensor {
    let (d, g) = (layout.depth(), layout.grid);
    let mut gr = Tensor::zeros(&[d, g, g]);
    for ch in 0..d {
        for row in 0..g {
            for col in 0..g {
                let i = layout.cell_offset(row, col) + ch;
                let (y, up) = (out.data()[i], grad.data()[i]);
                let deriv = if layout.is_size_entry(ch) {
                    if raw.at3(ch, row, col).abs() < SIZE_LOGIT_LIMIT {
                        y
                    } else {
                        0.0
                    }
                } else {
                    y * (1.0 - y)
                };
                gr.set3(ch, row, col, up * deriv);
            }
        }
    }
    gr
}

#[derive(Debug, Clone)]
struct ConvLayer {
    weights: Param,
    bias: Param,
    stride: usize,
    pad: usize,
    activation: Activation,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(ConvLayer),
    Pool { size: usize, stride: usize, pad: usize },
    Head(ConvLayer),
}

#[derive(Debug, Clone)]
enum Cache {
    Conv { input: Tensor, pre: Tensor },
    Pool { input_shape: Vec<usize>, indices: Vec<usize> },
    Head { input: Tensor, raw: Tensor, out: Tensor },
}

/// A configured network with its parameters and an optional recorded forward pass.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    tape: Option<Vec<Cache>>,
}

impl Network {
    /// Builds the layer stack with weights drawn uniformly from
    /// `[-sqrt(2/fan_in), sqrt(2/fan_in)]` and zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = 3;
        let mut layers = Vec::with_capacity(config.layers.len());
        for spec in &config.layers {
            match spec.kind {
                LayerKind::MaxPool => layers.push(Layer::Pool {
                    size: spec.kernel,
                    stride: spec.stride,
                    pad: spec.pad,
                }),
                LayerKind::Conv | LayerKind::DetectHead => {
                    let fan_in = channels * spec.kernel * spec.kernel;
                    let s = (2.0 / fan_in as f64).sqrt();
                    let n = spec.filters * fan_in;
                    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-s..=s)).collect();
                    let conv = ConvLayer {
                        weights: Param::new(Tensor::from_vec(
                            &[spec.filters, channels, spec.kernel, spec.kernel],
                            w,
                        )?),
                        bias: Param::new(Tensor::zeros(&[spec.filters])),
                        stride: spec.stride,
                        pad: spec.pad,
                        activation: spec.activation,
                    };
                    layers.push(if spec.kind == LayerKind::Conv {
                        Layer::Conv(conv)
                    } else {
                        Layer::Head(conv)
                    });
                    channels = spec.filters;
                }
            }
        }
        Ok(Self {
            config,
            layers,
            tape: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> HeadLayout {
        HeadLayout::from(&self.config)
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        if image.shape() != [3, s, s] {
            return shape(format!("network expects a [3, {s}, {s}] image, got {:?}", image.shape()));
        }
        Ok(())
    }

    /// Inference pass; returns the squashed `[g, g, B*5 + C]` prediction.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        self.run(image, None)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_train(&mut self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Vec::with_capacity(self.layers.len());
        let out = self.run(image, Some(&mut tape))?;
        self.tape = Some(tape);
        Ok(out)
    }

    fn run(&self, image: &Tensor, mut tape: Option<&mut Vec<Cache>>) -> Result<Tensor> {
        self.check_input(image)?;
        let layout = self.layout();
        let mut x = image.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => {
                    let pre = conv2d(&x, &c.weights.value, &c.bias.value, c.stride, c.pad)?;
                    let post = activate(&pre, c.activation);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Cache::Conv { input: x, pre });
                    }
                    post
                }
                Layer::Pool { size, stride, pad } => {
                    let (out, indices) = maxpool2d_with_indices(&x, *size, *stride, *pad)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Cache::Pool {
                            input_shape: x.shape().to_vec(),
                            indices,
                        });
                    }
                    out
                }
                Layer::Head(c) => {
                    let raw = conv2d(&x, &c.weights.value, &c.bias.value, c.stride, c.pad)?;
                    let out = squash_head(&raw, layout)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Cache::Head {
                            input: x,
                            raw,
                            out: out.clone(),
                        });
                    }
                    out
                }
            };
        }
        Ok(x)
    }

    /// Inference pass that also returns the winning input index of every
    /// max-pool window, per pool layer. Inputs with identical routes lie in
    /// the same smooth piece of the network function, activation kinks aside.
    pub fn forward_with_routes(&self, image: &Tensor) -> Result<(Tensor, Vec<Vec<usize>>)> {
        let mut tape = Vec::new();
        let out = self.run(image, Some(&mut tape))?;
        let routes = tape
            .into_iter()
            .filter_map(|c| match c {
                Cache::Pool { indices, .. } => Some(indices),
                _ => None,
            })
            .collect();
        Ok((out, routes))
    }

    /// Backpropagates `upstream` (gradient w.r.t. the prediction) through the
    /// recorded pass, adding into every parameter gradient. Consumes the tape.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<()> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let layout = self.layout();
        let mut grad = upstream.clone();
        for (layer, cache) in self.layers.iter_mut().zip(tape).rev() {
            grad = match (layer, cache) {
                (Layer::Conv(c), Cache::Conv { input, pre }) => {
                    let gpre = activate_backward(&pre, &grad, c.activation);
                    let g = conv2d_backward(&input, &c.weights.value, &gpre, c.stride, c.pad)?;
                    add_into(&mut c.weights.grad, &g.weights);
                    add_into(&mut c.bias.grad, &g.bias);
                    g.input
                }
                (Layer::Pool { .. }, Cache::Pool { input_shape, indices }) => {
                    maxpool2d_backward(&input_shape, &indices, &grad)?
                }
                (Layer::Head(c), Cache::Head { input, raw, out }) => {
                    layout.check(&grad)?;
                    let graw = squash_head_backward(&raw, &out, &grad, layout);
                    let g = conv2d_backward(&input, &c.weights.value, &graw, c.stride, c.pad)?;
                    add_into(&mut c.weights.grad, &g.weights);
                    add_into(&mut c.bias.grad, &g.bias);
                    g.input
                }
                _ => return Err(Error::State("tape does not match layer stack".into())),
            };
        }
        Ok(())
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    /// Parameters in declaration order, biases before weights within a layer.
    pub fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Conv(c) | Layer::Head(c) => vec![&c.bias, &c.weights],
                Layer::Pool { .. } => vec![],
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Conv(c) | Layer::Head(c) => vec![&mut c.bias, &mut c.weights],
                Layer::Pool { .. } => vec![],
            })
            .collect()
    }

    pub fn param_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !matches!(l, Layer::Pool { .. }))
            .count()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Multiplies every gradient by `factor` (batch averaging).
    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Clears momentum buffers, e.g. after loading weights.
    pub fn reset_momentum(&mut self) {
        for p in self.params_mut() {
            p.momentum_buf.fill(0.0);
        }
    }
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Builds one of the two preset variants with deterministic initialization.
pub fn build_network(
    variant: Variant,
    classes: usize,
    boxes: usize,
    input_size: usize,
    seed: u64,
) -> Result<Network> {
    Network::new(NetworkConfig::preset(variant, classes, boxes, input_size)?, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::NetworkConfig;

    fn small(variant: Variant, seed: u64) -> Network {
        Network::new(NetworkConfig::preset_scaled(variant, 3, 2, 64, 2).unwrap(), seed).unwrap()
    }

    fn image(size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3 * size * size;
        Tensor::from_vec(&[3, size, size], (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn output_shape() {
        let net = small(Variant::Default, 1);
        let out = net.forward(&image(64, 2)).unwrap();
        assert_eq!(out.shape(), &[2, 2, 13]);
        assert!(out.all_finite());
    }

    #[test]
    fn wrong_input_size_is_shape_error() {
        let net = small(Variant::Default, 1);
        assert!(matches!(net.forward(&image(32, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_network_gives_half_confidence() {
        let mut net = small(Variant::Improved, 1);
        for p in net.params_mut() {
            p.value.fill(0.0);
        }
        let layout = net.layout();
        let out = net.forward(&image(64, 3)).unwrap();
        for row in 0..2 {
            for col in 0..2 {
                for slot in 0..2 {
                    let o = layout.slot_offset(row, col, slot);
                    assert_eq!(out.data()[o + 4], 0.5);
                    assert_eq!(out.data()[o], 0.5);
                    assert_eq!(out.data()[o + 2], 0.5); // exp(0) / g
                }
                for c in 0..3 {
                    assert_eq!(out.data()[layout.class_offset(row, col) + c], 0.5);
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let a = small(Variant::Improved, 9);
        let b = small(Variant::Improved, 9);
        let img = image(64, 4);
        assert_eq!(a.forward(&img).unwrap(), b.forward(&img).unwrap());
        assert_eq!(a.forward(&img).unwrap(), a.forward(&img).unwrap());
    }

    #[test]
    fn variants_differ() {
        let img = image(64, 4);
        let d = small(Variant::Default, 9).forward(&img).unwrap();
        let i = small(Variant::Improved, 9).forward(&img).unwrap();
        assert_ne!(d, i);
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = small(Variant::Default, 1);
        let g = Tensor::zeros(&[2, 2, 13]);
        assert!(matches!(net.backward(&g), Err(Error::State(_))));
        net.forward_train(&image(64, 1)).unwrap();
        net.backward(&g).unwrap();
        assert!(matches!(net.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn declared_parameter_count_matches() {
        for v in [Variant::Default, Variant::Improved] {
            let net = small(v, 0);
            assert_eq!(net.param_count(), net.config().param_count());
        }
    }

    #[test]
    fn canonical_416_shape() {
        let cfg = NetworkConfig::preset(Variant::Default, 3, 2, 416).unwrap();
        assert_eq!(HeadLayout::from(&cfg).depth(), 13);
        assert_eq!(cfg.grid_size, 13);
    }

    #[test]
    fn head_gradient_matches_finite_differences() {
        let layout = HeadLayout {
            grid: 2,
            boxes: 2,
            classes: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw = Tensor::from_vec(
            &[13, 2, 2],
            (0..52).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let proj: Vec<f64> = (0..52).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let obj = |r: &Tensor| -> f64 {
            squash_head(r, layout)
                .unwrap()
                .data()
                .iter()
                .zip(&proj)
                .map(|(a, b)| a * b)
                .sum()
        };
        let out = squash_head(&raw, layout).unwrap();
        let up = Tensor::from_vec(&[2, 2, 13], proj.clone()).unwrap();
        let an = squash_head_backward(&raw, &out, &up, layout);
        for i in 0..raw.len() {
            let (mut p, mut m) = (raw.clone(), raw.clone());
            p.data_mut()[i] += 1e-5;
            m.data_mut()[i] -= 1e-5;
            let fd = (obj(&p) - obj(&m)) / 2e-5;
            assert!((fd - an.data()[i]).abs() < 1e-8, "entry {i}: {fd} vs {}", an.data()[i]);
        }
    }
}
