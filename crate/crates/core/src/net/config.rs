//! Layer stacks, presets and their canonical text form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::kernels::{conv_output_extent, LrnParams};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        name: String,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        relu: bool,
    },
    MaxPool {
        name: String,
        window: usize,
        stride: usize,
    },
    Lrn {
        name: String,
        params: LrnParams,
    },
    Fc {
        name: String,
        out_dim: usize,
        relu: bool,
    },
    Dropout {
        name: String,
        rate: f64,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv { name, .. }
            | LayerSpec::MaxPool { name, .. }
            | LayerSpec::Lrn { name, .. }
            | LayerSpec::Fc { name, .. }
            | LayerSpec::Dropout { name, .. } => name,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fc { .. })
    }

    fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            name: name.into(),
            out_channels,
            kernel,
            stride,
            pad,
            relu: true,
        }
    }

    fn pool(name: &str) -> Self {
        LayerSpec::MaxPool {
            name: name.into(),
            window: 3,
            stride: 2,
        }
    }

    fn lrn(name: &str) -> Self {
        LayerSpec::Lrn {
            name: name.into(),
            params: LrnParams::default(),
        }
    }

    fn fc(name: &str, out_dim: usize, relu: bool) -> Self {
        LayerSpec::Fc {
            name: name.into(),
            out_dim,
            relu,
        }
    }

    fn dropout(name: &str) -> Self {
        LayerSpec::Dropout {
            name: name.into(),
            rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperAlexnetLike,
    DeskSmall,
    Custom,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::PaperAlexnetLike => "paper_alexnet_like",
            Preset::DeskSmall => "desk_small",
            Preset::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_alexnet_like" => Ok(Preset::PaperAlexnetLike),
            "desk_small" => Ok(Preset::DeskSmall),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::invalid(format!("unknown preset `{other}`"))),
        }
    }
}

/// Network architecture. Inputs are `[3, input_side, input_side]` crops taken
/// from `stitch_side × stitch_side` stitched pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub preset: Preset,
    pub input_side: usize,
    pub stitch_side: usize,
    pub layers: Vec<LayerSpec>,
}

pub const INPUT_CHANNELS: usize = 3;

impl NetworkConfig {
    /// Five conv layers and three fc layers on 227×227 crops of 256×256 pairs.
    pub fn paper_alexnet_like() -> Self {
        NetworkConfig {
            preset: Preset::PaperAlexnetLike,
            input_side: 227,
            stitch_side: 256,
            layers: vec![
                LayerSpec::conv("conv1", 96, 11, 4, 0),
                LayerSpec::pool("pool1"),
                LayerSpec::lrn("norm1"),
                LayerSpec::conv("conv2", 256, 5, 1, 2),
                LayerSpec::pool("pool2"),
                LayerSpec::lrn("norm2"),
                LayerSpec::conv("conv3", 384, 3, 1, 1),
                LayerSpec::conv("conv4", 384, 3, 1, 1),
                LayerSpec::conv("conv5", 256, 3, 1, 1),
                LayerSpec::pool("pool5"),
                LayerSpec::fc("fc6", 4096, true),
                LayerSpec::dropout("drop6"),
                LayerSpec::fc("fc7", 4096, true),
                LayerSpec::dropout("drop7"),
                LayerSpec::fc("fc8", 1, false),
            ],
        }
    }

    /// Two conv layers and three fc layers on 64×64 crops of 72×72 pairs.
    pub fn desk_small() -> Self {
        NetworkConfig {
            preset: Preset::DeskSmall,
            input_side: 64,
            stitch_side: 72,
            layers: vec![
                LayerSpec::conv("conv1", 16, 5, 2, 2),
                LayerSpec::pool("pool1"),
                LayerSpec::lrn("norm1"),
                LayerSpec::conv("conv2", 32, 3, 1, 1),
                LayerSpec::pool("pool2"),
                LayerSpec::lrn("norm2"),
                LayerSpec::fc("fc3", 128, true),
                LayerSpec::dropout("drop3"),
                LayerSpec::fc("fc4", 64, true),
                LayerSpec::dropout("drop4"),
                LayerSpec::fc("fc5", 1, false),
            ],
        }
    }

    pub fn from_preset(preset: Preset) -> Result<Self> {
        match preset {
            Preset::PaperAlexnetLike => Ok(Self::paper_alexnet_like()),
            Preset::DeskSmall => Ok(Self::desk_small()),
            Preset::Custom => Err(Error::invalid("the custom preset has no built-in layer list")),
        }
    }

    /// Sets the rate of every dropout layer.
    pub fn with_dropout(mut self, rate: f64) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Dropout { rate: r, .. } = l {
                *r = rate;
            }
        }
        self
    }

    /// Activation shape after each layer, validating the whole stack.
    pub fn shape_plan(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_side == 0 || self.input_side > self.stitch_side {
            return Err(Error::invalid(format!(
                "input_side {} must be in 1..={}",
                self.input_side, self.stitch_side
            )));
        }
        if self.stitch_side % 2 != 0 {
            return Err(Error::invalid("stitch_side must be even"));
        }
        let mut names = std::collections::HashSet::new();
        let mut shape = vec![INPUT_CHANNELS, self.input_side, self.input_side];
        let mut plan = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let bad = |detail: String| Error::LayerConfig {
                layer: layer.name().to_string(),
                detail,
            };
            if !names.insert(layer.name()) || layer.name().is_empty() || layer.name().contains(char::is_whitespace) {
                return Err(bad("layer names must be unique, non-empty and without spaces".into()));
            }
            shape = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                    ..
                } => {
                    if shape.len() != 3 {
                        return Err(bad(format!("conv needs a [C, H, W] input, got {shape:?}")));
                    }
                    if *out_channels == 0 {
                        return Err(bad("zero output channels".into()));
                    }
                    let oh = conv_output_extent(shape[1], *kernel, *stride, *pad);
                    let ow = conv_output_extent(shape[2], *kernel, *stride, *pad);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => vec![*out_channels, oh, ow],
                        _ => {
                            return Err(bad(format!(
                                "kernel {kernel} stride {stride} pad {pad} does not fit input {shape:?}"
                            )))
                        }
                    }
                }
                LayerSpec::MaxPool { window, stride, .. } => {
                    if shape.len() != 3 {
                        return Err(bad(format!("maxpool needs a [C, H, W] input, got {shape:?}")));
                    }
                    let oh = conv_output_extent(shape[1], *window, *stride, 0);
                    let ow = conv_output_extent(shape[2], *window, *stride, 0);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => vec![shape[0], oh, ow],
                        _ => return Err(bad(format!("window {window} does not fit input {shape:?}"))),
                    }
                }
                LayerSpec::Lrn { params, .. } => {
                    params.validate().map_err(|e| bad(e.to_string()))?;
                    if shape.len() != 3 {
                        return Err(bad(format!("lrn needs a [C, H, W] input, got {shape:?}")));
                    }
                    shape
                }
                LayerSpec::Fc { out_dim, .. } => {
                    if *out_dim == 0 {
                        return Err(bad("zero output dim".into()));
                    }
                    vec![*out_dim]
                }
                LayerSpec::Dropout { rate, .. } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(bad(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    shape
                }
            };
            plan.push(shape.clone());
        }
        match self.layers.last() {
            Some(LayerSpec::Fc {
                out_dim: 1,
                relu: false,
                ..
            }) => Ok(plan),
            Some(l) => Err(Error::LayerConfig {
                layer: l.name().to_string(),
                detail: "the last layer must be fc with output dim 1 and no relu".into(),
            }),
            None => Err(Error::invalid("empty layer list")),
        }
    }

    /// `(name, shape)` of every parameter array in forward order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let plan = self.shape_plan()?;
        let mut prev = vec![INPUT_CHANNELS, self.input_side, self.input_side];
        let mut out = Vec::new();
        for (layer, shape) in self.layers.iter().zip(&plan) {
            match layer {
                LayerSpec::Conv {
                    name,
                    out_channels,
                    kernel,
                    ..
                } => {
                    out.push((format!("{name}.weight"), vec![*out_channels, prev[0], *kernel, *kernel]));
                    out.push((format!("{name}.bias"), vec![*out_channels]));
                }
                LayerSpec::Fc { name, out_dim, .. } => {
                    let in_dim: usize = prev.iter().product();
                    out.push((format!("{name}.weight"), vec![*out_dim, in_dim]));
                    out.push((format!("{name}.bias"), vec![*out_dim]));
                }
                _ => {}
            }
            prev = shape.clone();
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum())
    }

    /// Line-oriented canonical text; [`NetworkConfig::parse`] inverts it exactly.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}", self.preset.as_str());
        let _ = writeln!(s, "input_side = {}", self.input_side);
        let _ = writeln!(s, "stitch_side = {}", self.stitch_side);
        for l in &self.layers {
            let _ = match l {
                LayerSpec::Conv {
                    name,
                    out_channels,
                    kernel,
                    stride,
                    pad,
                    relu,
                } => writeln!(
                    s,
                    "layer = conv {name} out={out_channels} kernel={kernel} stride={stride} pad={pad} relu={relu}"
                ),
                LayerSpec::MaxPool { name, window, stride } => {
                    writeln!(s, "layer = maxpool {name} window={window} stride={stride}")
                }
                LayerSpec::Lrn { name, params } => writeln!(
                    s,
                    "layer = lrn {name} k={:?} n={} alpha={:?} beta={:?}",
                    params.k, params.n, params.alpha, params.beta
                ),
                LayerSpec::Fc { name, out_dim, relu } => {
                    writeln!(s, "layer = fc {name} out={out_dim} relu={relu}")
                }
                LayerSpec::Dropout { name, rate } => writeln!(s, "layer = dropout {name} rate={rate:?}"),
            };
        }
        s
    }

    /// Parses the lines produced by [`NetworkConfig::to_canonical_text`].
    /// Lines with other keys are ignored so the text can share a block with metadata.
    pub fn parse(text: &str) -> Result<Self> {
        let mut preset = None;
        let mut input_side = None;
        let mut stitch_side = None;
        let mut layers = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let Some((key, value)) = line.split_once(" = ") else {
                continue;
            };
            let err = |m: &str| Error::invalid(format!("config line {}: {m}: `{line}`", lineno + 1));
            match key.trim() {
                "preset" => preset = Some(value.trim().parse::<Preset>()?),
                "input_side" => input_side = Some(value.trim().parse().map_err(|_| err("bad integer"))?),
                "stitch_side" => stitch_side = Some(value.trim().parse().map_err(|_| err("bad integer"))?),
                "layer" => layers.push(parse_layer(value).map_err(|m| err(&m))?),
                _ => {}
            }
        }
        let cfg = NetworkConfig {
            preset: preset.ok_or_else(|| Error::invalid("config has no preset"))?,
            input_side: input_side.ok_or_else(|| Error::invalid("config has no input_side"))?,
            stitch_side: stitch_side.ok_or_else(|| Error::invalid("config has no stitch_side"))?,
            layers,
        };
        cfg.shape_plan()?;
        Ok(cfg)
    }

    /// Human-readable list of differences, empty when equal.
    pub fn diff(&self, other: &NetworkConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.input_side != other.input_side {
            out.push(format!("input_side {} vs {}", self.input_side, other.input_side));
        }
        if self.stitch_side != other.stitch_side {
            out.push(format!("stitch_side {} vs {}", self.stitch_side, other.stitch_side));
        }
        if self.layers.len() != other.layers.len() {
            out.push(format!("{} layers vs {}", self.layers.len(), other.layers.len()));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a != b {
                out.push(format!("layer `{}` differs: {a:?} vs {b:?}", a.name()));
            }
        }
        out
    }
}

fn parse_layer(value: &str) -> std::result::Result<LayerSpec, String> {
    let mut parts = value.split_whitespace();
    let kind = parts.next().ok_or("missing layer kind")?;
    let name = parts.next().ok_or("missing layer name")?.to_string();
    let kv: std::collections::HashMap<&str, &str> = parts
        .map(|p| p.split_once('=').ok_or_else(|| format!("expected key=value, got `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    fn get<T: std::str::FromStr>(kv: &std::collections::HashMap<&str, &str>, k: &str) -> std::result::Result<T, String> {
        kv.get(k)
            .ok_or_else(|| format!("missing `{k}`"))?
            .parse()
            .map_err(|_| format!("bad value for `{k}`"))
    }
    Ok(match kind {
        "conv" => LayerSpec::Conv {
            name,
            out_channels: get(&kv, "out")?,
            kernel: get(&kv, "kernel")?,
            stride: get(&kv, "stride")?,
            pad: get(&kv, "pad")?,
            relu: get(&kv, "relu")?,
        },
        "maxpool" => LayerSpec::MaxPool {
            name,
            window: get(&kv, "window")?,
            stride: get(&kv, "stride")?,
        },
        "lrn" => LayerSpec::Lrn {
            name,
            params: LrnParams {
                k: get(&kv, "k")?,
                n: get(&kv, "n")?,
                alpha: get(&kv, "alpha")?,
                beta: get(&kv, "beta")?,
            },
        },
        "fc" => LayerSpec::Fc {
            name,
            out_dim: get(&kv, "out")?,
            relu: get(&kv, "relu")?,
        },
        "dropout" => LayerSpec::Dropout {
            name,
            rate: get(&kv, "rate")?,
        },
        other => return Err(format!("unknown layer kind `{other}`")),
    })
}
