//! The dual-stream fusion classifier: configuration, parameters, forward
//! pass, parameter/MAC accounting and checkpoints.

mod accounting;
mod checkpoint;
mod forward;
mod params;

pub use accounting::{
    affine_macs, conv_macs, count_params, estimate_flops, shape_report, CountRow, Counts, ShapeReport,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{backbone_forward, l2_penalty, model_forward, model_forward_bound, ForwardOptions, ForwardPass};
pub use params::{param_specs, ModelParams, NamedTensor, ParamSpec};

use std::fmt;
use std::str::FromStr;

use crate::config::KvDoc;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    Tanh,
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
        })
    }
}

impl FromStr for Nonlinearity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relu" => Ok(Nonlinearity::Relu),
            "tanh" => Ok(Nonlinearity::Tanh),
            _ => Err(format!("expected relu|tanh, got `{s}`")),
        }
    }
}

/// One 3×3 conv stage: conv (pad 1) → nonlinearity → per-sample norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stage {
    pub channels: usize,
    pub stride: usize,
}

/// Surrogate backbone: a stack of conv stages emitting C×S×S features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub stream: Stream,
    pub stages: Vec<Stage>,
    pub nonlinearity: Nonlinearity,
}

impl BackboneConfig {
    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(3, |s| s.channels)
    }

    pub fn total_stride(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    /// Output side length for a square input, if the strides divide it.
    pub fn out_spatial(&self, input_hw: usize) -> Option<usize> {
        let s = self.total_stride();
        (s > 0 && input_hw.is_multiple_of(s) && input_hw >= s).then(|| input_hw / s)
    }

    fn stages_text(&self) -> String {
        self.stages.iter().map(|s| format!("{}/{}", s.channels, s.stride)).collect::<Vec<_>>().join(",")
    }

    fn parse_stages(key: &str, text: &str) -> Result<Vec<Stage>> {
        let mut stages = Vec::new();
        for part in text.split(',') {
            let bad = || Error::config(key, format!("stage `{part}` is not <channels>/<stride>"));
            let (c, s) = part.trim().split_once('/').ok_or_else(bad)?;
            let channels: usize = c.parse().map_err(|_| bad())?;
            let stride: usize = s.parse().map_err(|_| bad())?;
            if channels == 0 || stride == 0 {
                return Err(bad());
            }
            stages.push(Stage { channels, stride });
        }
        if stages.is_empty() {
            return Err(Error::config(key, "no stages"));
        }
        Ok(stages)
    }
}

/// Which network a parameter set describes. Single-stream networks are the
/// distillation teachers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Fusion,
    StreamA,
    StreamB,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Fusion => "fusion",
            Architecture::StreamA => "stream_a",
            Architecture::StreamB => "stream_b",
        })
    }
}

impl FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fusion" => Ok(Architecture::Fusion),
            "stream_a" => Ok(Architecture::StreamA),
            "stream_b" => Ok(Architecture::StreamB),
            _ => Err(format!("expected fusion|stream_a|stream_b, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionNetConfig {
    pub arch: Architecture,
    pub input_hw: usize,
    pub backbone_a: BackboneConfig,
    pub backbone_b: BackboneConfig,
    pub fusion_out: usize,
    pub pooled: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub l2_lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full published dimensions; for shape and parameter accounting.
    Paper,
    /// Small channels on 32×32 inputs; what training runs use.
    Desk,
    /// Tiny smooth network for finite-difference checks.
    Micro,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            "micro" => Ok(Preset::Micro),
            _ => Err(format!("expected paper|desk|micro, got `{s}`")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
            Preset::Micro => "micro",
        })
    }
}

fn stages(spec: &[(usize, usize)]) -> Vec<Stage> {
    spec.iter().map(|&(channels, stride)| Stage { channels, stride }).collect()
}

pub const CONFIG_KEYS: &[&str] = &[
    "arch",
    "input_hw",
    "backbone_a.stages",
    "backbone_a.nonlinearity",
    "backbone_b.stages",
    "backbone_b.nonlinearity",
    "fusion_out",
    "pooled",
    "num_classes",
    "dropout",
    "l2_lambda",
];

impl FusionNetConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            // stream A: wide and shallow, 224 → 7 with 1792 channels;
            // stream B: narrower and deeper, 224 → 7 with 768 channels.
            Preset::Paper => Self {
                arch: Architecture::Fusion,
                input_hw: 224,
                backbone_a: BackboneConfig {
                    stream: Stream::A,
                    stages: stages(&[(32, 2), (64, 2), (128, 2), (256, 2), (1792, 2)]),
                    nonlinearity: Nonlinearity::Relu,
                },
                backbone_b: BackboneConfig {
                    stream: Stream::B,
                    stages: stages(&[(24, 2), (48, 2), (96, 2), (96, 1), (192, 2), (768, 2)]),
                    nonlinearity: Nonlinearity::Relu,
                },
                fusion_out: 64,
                pooled: 7,
                num_classes: 89,
                dropout: 0.5,
                l2_lambda: 1e-4,
            },
            Preset::Desk => Self {
                arch: Architecture::Fusion,
                input_hw: 32,
                backbone_a: BackboneConfig {
                    stream: Stream::A,
                    stages: stages(&[(16, 2), (32, 2), (64, 2)]),
                    nonlinearity: Nonlinearity::Relu,
                },
                backbone_b: BackboneConfig {
                    stream: Stream::B,
                    stages: stages(&[(8, 2), (16, 2), (16, 1), (32, 2)]),
                    nonlinearity: Nonlinearity::Relu,
                },
                fusion_out: 16,
                pooled: 4,
                num_classes: 3,
                dropout: 0.5,
                l2_lambda: 1e-4,
            },
            Preset::Micro => Self {
                arch: Architecture::Fusion,
                input_hw: 8,
                backbone_a: BackboneConfig {
                    stream: Stream::A,
                    stages: stages(&[(4, 2), (6, 2)]),
                    nonlinearity: Nonlinearity::Tanh,
                },
                backbone_b: BackboneConfig {
                    stream: Stream::B,
                    stages: stages(&[(3, 2), (4, 1), (5, 2)]),
                    nonlinearity: Nonlinearity::Tanh,
                },
                fusion_out: 4,
                pooled: 2,
                num_classes: 3,
                dropout: 0.5,
                l2_lambda: 1e-4,
            },
        }
    }

    /// Same dimensions with a different head width.
    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn with_arch(mut self, arch: Architecture) -> Self {
        self.arch = arch;
        self
    }

    /// Spatial side of the backbone outputs.
    pub fn backbone_spatial(&self) -> Result<usize> {
        let a = self.backbone_a.out_spatial(self.input_hw);
        let b = self.backbone_b.out_spatial(self.input_hw);
        let check = |name: &str, s: Option<usize>| {
            s.ok_or_else(|| Error::config("input_hw", format!("{} not divisible by {name} strides", self.input_hw)))
        };
        let a = check("backbone_a", a)?;
        let b = check("backbone_b", b)?;
        if self.arch == Architecture::Fusion && a != b {
            return Err(Error::config("input_hw", format!("streams disagree on spatial size: {a} vs {b}")));
        }
        Ok(match self.arch {
            Architecture::StreamB => b,
            _ => a,
        })
    }

    /// Channels entering the pooling stage.
    pub fn pooled_channels(&self) -> usize {
        match self.arch {
            Architecture::Fusion => self.fusion_out,
            Architecture::StreamA => self.backbone_a.out_channels(),
            Architecture::StreamB => self.backbone_b.out_channels(),
        }
    }

    pub fn fused_channels(&self) -> usize {
        self.backbone_a.out_channels() + self.backbone_b.out_channels()
    }

    pub fn flatten_dim(&self) -> usize {
        self.pooled_channels() * self.pooled * self.pooled
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.l2_lambda >= 0.0) {
            return Err(Error::config("l2_lambda", "must be non-negative"));
        }
        if self.fusion_out == 0 {
            return Err(Error::config("fusion_out", "must be positive"));
        }
        let s = self.backbone_spatial()?;
        if self.pooled == 0 || self.pooled > s {
            return Err(Error::config("pooled", format!("must lie in [1, {s}]")));
        }
        Ok(())
    }

    pub fn to_kv(&self, doc: &mut KvDoc) {
        doc.set("arch", self.arch);
        doc.set("input_hw", self.input_hw);
        doc.set("backbone_a.stages", self.backbone_a.stages_text());
        doc.set("backbone_a.nonlinearity", self.backbone_a.nonlinearity);
        doc.set("backbone_b.stages", self.backbone_b.stages_text());
        doc.set("backbone_b.nonlinearity", self.backbone_b.nonlinearity);
        doc.set("fusion_out", self.fusion_out);
        doc.set("pooled", self.pooled);
        doc.set("num_classes", self.num_classes);
        doc.set("dropout", self.dropout);
        doc.set("l2_lambda", self.l2_lambda);
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let cfg = Self {
            arch: doc.parse_req("arch")?,
            input_hw: doc.parse_req("input_hw")?,
            backbone_a: BackboneConfig {
                stream: Stream::A,
                stages: BackboneConfig::parse_stages("backbone_a.stages", doc.require("backbone_a.stages")?)?,
                nonlinearity: doc.parse_req("backbone_a.nonlinearity")?,
            },
            backbone_b: BackboneConfig {
                stream: Stream::B,
                stages: BackboneConfig::parse_stages("backbone_b.stages", doc.require("backbone_b.stages")?)?,
                nonlinearity: doc.parse_req("backbone_b.nonlinearity")?,
            },
            fusion_out: doc.parse_req("fusion_out")?,
            pooled: doc.parse_req("pooled")?,
            num_classes: doc.parse_req("num_classes")?,
            dropout: doc.parse_req("dropout")?,
            l2_lambda: doc.parse_req("l2_lambda")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
