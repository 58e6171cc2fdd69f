use std::fmt;
use std::str::FromStr;

use crate::error::{config, Error, Result};
use crate::kvfile::{Document, Section};
use crate::nn::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Seven 3x3 leaky convolutions, six max pools.
    Default,
    /// The default plan plus two more 3x3 convolutions, Mish everywhere.
    Improved,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Default => "default",
            Variant::Improved => "improved",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Variant::Default),
            "improved" => Ok(Variant::Improved),
            other => config(format!("unknown network variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    MaxPool,
    /// 1x1 linear projection to `B*5 + C` channels followed by output squashing.
    DetectHead,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Conv => "conv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::DetectHead => "detect_head",
        })
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(LayerKind::Conv),
            "maxpool" => Ok(LayerKind::MaxPool),
            "detect_head" => Ok(LayerKind::DetectHead),
            other => config(format!("unknown layer kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(filters: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Conv,
            filters,
            kernel: 3,
            stride: 1,
            pad: 1,
            activation,
        }
    }

    /// `pad` extra cells past the bottom/right edge.
    pub fn maxpool(size: usize, stride: usize, pad: usize) -> Self {
        Self {
            kind: LayerKind::MaxPool,
            filters: 0,
            kernel: size,
            stride,
            pad,
            activation: Activation::Linear,
        }
    }

    pub fn detect_head(depth: usize) -> Self {
        Self {
            kind: LayerKind::DetectHead,
            filters: depth,
            kernel: 1,
            stride: 1,
            pad: 0,
            activation: Activation::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    pub boxes_per_cell: usize,
    pub grid_size: usize,
    pub input_size: usize,
}

/// Filter count of the first convolution in the canonical plan.
pub const CANONICAL_BASE_FILTERS: usize = 16;

impl NetworkConfig {
    pub fn preset(variant: Variant, classes: usize, boxes: usize, input_size: usize) -> Result<Self> {
        Self::preset_scaled(variant, classes, boxes, input_size, CANONICAL_BASE_FILTERS)
    }

    /// Same topology as [`NetworkConfig::preset`] with filter counts
    /// `base, 2*base, ..., 64*base` (and the improved extras at `32*base`, `64*base`).
    pub fn preset_scaled(
        variant: Variant,
        classes: usize,
        boxes: usize,
        input_size: usize,
        base_filters: usize,
    ) -> Result<Self> {
        if input_size == 0 || input_size % 32 != 0 {
            return config(format!("input size {input_size} is not divisible by 32"));
        }
        if classes == 0 || boxes == 0 {
            return config("classes and boxes per cell must be at least 1");
        }
        if base_filters == 0 {
            return config("base filter count must be positive");
        }
        let act = match variant {
            Variant::Default => Activation::Leaky,
            Variant::Improved => Activation::Mish,
        };
        let mut layers = Vec::new();
        for i in 0..6 {
            layers.push(LayerSpec::conv(base_filters << i, act));
            // the last pool keeps resolution so total downsampling is 32
            layers.push(if i < 5 {
                LayerSpec::maxpool(2, 2, 0)
            } else {
                LayerSpec::maxpool(2, 1, 1)
            });
        }
        layers.push(LayerSpec::conv(base_filters << 6, act));
        if variant == Variant::Improved {
            layers.push(LayerSpec::conv(base_filters << 5, act));
            layers.push(LayerSpec::conv(base_filters << 6, act));
        }
        layers.push(LayerSpec::detect_head(boxes * 5 + classes));
        let cfg = Self {
            variant,
            layers,
            num_classes: classes,
            boxes_per_cell: boxes,
            grid_size: input_size / 32,
            input_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_depth(&self) -> usize {
        self.boxes_per_cell * 5 + self.num_classes
    }

    pub fn count(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind == kind).count()
    }

    /// Spatial size after each layer, starting from `input_size`.
    fn trace_sizes(&self) -> Result<Vec<usize>> {
        let mut s = self.input_size;
        let mut sizes = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let padded = match l.kind {
                LayerKind::MaxPool => s + l.pad,
                _ => s + 2 * l.pad,
            };
            if l.kernel == 0 || l.stride == 0 || l.kernel > padded {
                return config(format!("layer {i}: window {} does not fit input {s}", l.kernel));
            }
            s = (padded - l.kernel) / l.stride + 1;
            sizes.push(s);
        }
        Ok(sizes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.boxes_per_cell == 0 {
            return config("classes and boxes per cell must be at least 1");
        }
        let heads = self.count(LayerKind::DetectHead);
        if heads != 1 || self.layers.last().map(|l| l.kind) != Some(LayerKind::DetectHead) {
            return config("exactly one detect_head is required and it must be the last layer");
        }
        let head = self.layers.last().expect("non-empty");
        if head.filters != self.head_depth() || head.activation != Activation::Linear {
            return config(format!(
                "detect_head must be a linear projection to {} channels",
                self.head_depth()
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            match l.kind {
                LayerKind::Conv => {
                    if l.filters == 0 {
                        return config(format!("layer {i}: conv needs filters"));
                    }
                    if l.activation == Activation::Linear {
                        return config(format!("layer {i}: hidden conv layers use leaky or mish"));
                    }
                }
                LayerKind::MaxPool if l.pad >= l.kernel.max(1) => {
                    return config(format!("layer {i}: pool padding must be below its size"));
                }
                _ => {}
            }
        }
        let (convs, pools) = (self.count(LayerKind::Conv), self.count(LayerKind::MaxPool));
        let expected_convs = match self.variant {
            Variant::Default => 7,
            Variant::Improved => 9,
        };
        if convs != expected_convs || pools != 6 {
            return config(format!(
                "{} variant needs {expected_convs} conv and 6 maxpool layers, got {convs} and {pools}",
                self.variant
            ));
        }
        let want = match self.variant {
            Variant::Default => Activation::Leaky,
            Variant::Improved => Activation::Mish,
        };
        if self
            .layers
            .iter()
            .any(|l| l.kind == LayerKind::Conv && l.activation != want)
        {
            return config(format!("{} variant uses {want} on every hidden conv", self.variant));
        }
        let sizes = self.trace_sizes()?;
        let out = *sizes.last().expect("non-empty");
        if out != self.grid_size || self.grid_size == 0 {
            return config(format!(
                "input {} reduces to a {out}x{out} grid, config says {}",
                self.input_size, self.grid_size
            ));
        }
        Ok(())
    }

    /// Parameter tensors as `(weight_shape, bias_len)` for every conv-like layer.
    pub fn param_shapes(&self) -> Vec<([usize; 4], usize)> {
        let mut channels = 3;
        let mut shapes = Vec::new();
        for l in &self.layers {
            if l.kind != LayerKind::MaxPool {
                shapes.push(([l.filters, channels, l.kernel, l.kernel], l.filters));
                channels = l.filters;
            }
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut root = Section::new("");
        root.push("variant", self.variant)
            .push("classes", self.num_classes)
            .push("boxes", self.boxes_per_cell)
            .push("grid", self.grid_size)
            .push("input_size", self.input_size);
        let mut doc = Document {
            sections: vec![root],
        };
        for l in &self.layers {
            let mut s = Section::new("layer");
            s.push("kind", l.kind);
            match l.kind {
                LayerKind::MaxPool => {
                    s.push("size", l.kernel).push("stride", l.stride).push("pad", l.pad);
                }
                _ => {
                    s.push("filters", l.filters)
                        .push("kernel", l.kernel)
                        .push("stride", l.stride)
                        .push("pad", l.pad)
                        .push("activation", l.activation);
                }
            }
            doc.sections.push(s);
        }
        doc.render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let root = doc.root();
        root.check_keys(&["variant", "classes", "boxes", "grid", "input_size"])?;
        let mut layers = Vec::new();
        for s in doc.sections.iter().skip(1) {
            if s.name != "layer" {
                return Err(Error::Parse {
                    line: s.line,
                    msg: format!("unexpected section [{}]", s.name),
                });
            }
            let kind: LayerKind = s.require("kind")?;
            let spec = match kind {
                LayerKind::MaxPool => {
                    s.check_keys(&["kind", "size", "stride", "pad"])?;
                    LayerSpec::maxpool(
                        s.require("size")?,
                        s.require("stride")?,
                        s.parse("pad")?.unwrap_or(0),
                    )
                }
                _ => {
                    s.check_keys(&["kind", "filters", "kernel", "stride", "pad", "activation"])?;
                    LayerSpec {
                        kind,
                        filters: s.require("filters")?,
                        kernel: s.require("kernel")?,
                        stride: s.parse("stride")?.unwrap_or(1),
                        pad: s.parse("pad")?.unwrap_or(0),
                        activation: s.require("activation")?,
                    }
                }
            };
            layers.push(spec);
        }
        let cfg = Self {
            variant: root.require("variant")?,
            layers,
            num_classes: root.require("classes")?,
            boxes_per_cell: root.require("boxes")?,
            grid_size: root.require("grid")?,
            input_size: root.require("input_size")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_preset_layout() {
        let cfg = NetworkConfig::preset(Variant::Default, 3, 2, 416).unwrap();
        assert_eq!(cfg.count(LayerKind::Conv), 7);
        assert_eq!(cfg.count(LayerKind::MaxPool), 6);
        assert_eq!(cfg.grid_size, 13);
        assert_eq!(cfg.head_depth(), 13);
        let filters: Vec<_> = cfg
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv)
            .map(|l| l.filters)
            .collect();
        assert_eq!(filters, [16, 32, 64, 128, 256, 512, 1024]);
        assert!(cfg
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv)
            .all(|l| l.activation == Activation::Leaky && l.kernel == 3 && l.stride == 1));
    }

    #[test]
    fn improved_preset_layout() {
        let cfg = NetworkConfig::preset(Variant::Improved, 3, 2, 416).unwrap();
        assert_eq!(cfg.count(LayerKind::Conv), 9);
        assert_eq!(cfg.count(LayerKind::MaxPool), 6);
        assert!(cfg
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv)
            .all(|l| l.activation == Activation::Mish));
        let head = cfg.layers.last().unwrap();
        assert_eq!(head.kind, LayerKind::DetectHead);
        assert_eq!(head.activation, Activation::Linear);
    }

    #[test]
    fn small_input_grid() {
        let cfg = NetworkConfig::preset(Variant::Default, 1, 1, 64).unwrap();
        assert_eq!(cfg.grid_size, 2);
        assert_eq!(cfg.head_depth(), 6);
    }

    #[test]
    fn rejects_bad_input_size() {
        assert!(NetworkConfig::preset(Variant::Default, 3, 2, 100).is_err());
        assert!(NetworkConfig::preset(Variant::Default, 0, 2, 64).is_err());
    }

    #[test]
    fn improved_has_more_parameters() {
        for (c, b, s) in [(1, 1, 32), (3, 2, 64), (5, 3, 416)] {
            let d = NetworkConfig::preset(Variant::Default, c, b, s).unwrap();
            let i = NetworkConfig::preset(Variant::Improved, c, b, s).unwrap();
            assert!(i.param_count() > d.param_count());
        }
    }

    #[test]
    fn text_round_trip() {
        for v in [Variant::Default, Variant::Improved] {
            let cfg = NetworkConfig::preset_scaled(v, 3, 2, 128, 4).unwrap();
            let text = cfg.to_text();
            let back = NetworkConfig::from_text(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn validation_catches_broken_configs() {
        let mut cfg = NetworkConfig::preset(Variant::Default, 3, 2, 64).unwrap();
        cfg.layers.remove(0);
        assert!(cfg.validate().is_err());

        let mut cfg = NetworkConfig::preset(Variant::Improved, 3, 2, 64).unwrap();
        cfg.layers[0].activation = Activation::Leaky;
        assert!(cfg.validate().is_err());

        let mut cfg = NetworkConfig::preset(Variant::Default, 3, 2, 64).unwrap();
        let head = cfg.layers.pop().unwrap();
        cfg.layers.insert(0, head);
        assert!(cfg.validate().is_err());

        let mut cfg = NetworkConfig::preset(Variant::Default, 3, 2, 64).unwrap();
        cfg.grid_size = 4;
        assert!(cfg.validate().is_err());
    }
}
