use std::fmt;

use super::params::param_specs;
use super::{Architecture, BackboneConfig, FusionNetConfig};
use crate::deform::{KERNEL, PREDICTOR_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::numel;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountRow {
    pub module: &'static str,
    pub count: u64,
}

/// Per-module tallies (parameters or MACs) in network order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Counts {
    pub rows: Vec<CountRow>,
}

impl Counts {
    fn add(&mut self, module: &'static str, count: u64) {
        match self.rows.iter_mut().find(|r| r.module == module) {
            Some(r) => r.count += count,
            None => self.rows.push(CountRow { module, count }),
        }
    }

    pub fn get(&self, module: &str) -> Option<u64> {
        self.rows.iter().find(|r| r.module == module).map(|r| r.count)
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.count).sum()
    }
}

/// Renders `module  count` lines with thousands separators and a total.
impl fmt::Display for Counts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            writeln!(f, "{:<18}{:>16}", r.module, group_digits(r.count))?;
        }
        writeln!(f, "{:<18}{:>16}", "total", group_digits(self.total()))
    }
}

pub(crate) fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Analytic parameter counts from the configured shapes.
pub fn count_params(cfg: &FusionNetConfig) -> Counts {
    let mut counts = Counts::default();
    for spec in param_specs(cfg) {
        counts.add(spec.module, numel(&spec.shape) as u64);
    }
    counts
}

/// Multiply-accumulates of a k×k convolution producing an `h_out×w_out` map.
pub fn conv_macs(in_ch: usize, out_ch: usize, kernel: usize, h_out: usize, w_out: usize) -> u64 {
    (out_ch * in_ch * kernel * kernel) as u64 * (h_out * w_out) as u64
}

pub fn affine_macs(in_dim: usize, out_dim: usize) -> u64 {
    in_dim as u64 * out_dim as u64
}

fn backbone_macs(bb: &BackboneConfig, input_hw: usize, module: &'static str, counts: &mut Counts) -> Result<usize> {
    let Some(_) = bb.out_spatial(input_hw) else {
        return Err(Error::config("input_hw", format!("{input_hw} not divisible by {module} strides")));
    };
    let (mut hw, mut in_ch) = (input_hw, 3);
    for s in &bb.stages {
        hw /= s.stride;
        counts.add(module, conv_macs(in_ch, s.channels, KERNEL, hw, hw));
        in_ch = s.channels;
    }
    Ok(hw)
}

/// MAC estimate over conv and affine layers at the given input size.
/// Bilinear sampling, normalization and pooling are not counted, so this
/// is a lower bound for the real cost.
pub fn estimate_flops(cfg: &FusionNetConfig, input_hw: usize) -> Result<Counts> {
    let mut counts = Counts::default();
    let mut spatial = 0;
    if cfg.arch != Architecture::StreamB {
        spatial = backbone_macs(&cfg.backbone_a, input_hw, "backbone_a", &mut counts)?;
    }
    if cfg.arch != Architecture::StreamA {
        spatial = backbone_macs(&cfg.backbone_b, input_hw, "backbone_b", &mut counts)?;
    }
    if cfg.arch == Architecture::Fusion {
        let fused = cfg.fused_channels();
        counts.add("fusion_main", conv_macs(fused, cfg.fusion_out, KERNEL, spatial, spatial));
        counts.add("fusion_predictor", conv_macs(fused, PREDICTOR_CHANNELS, KERNEL, spatial, spatial));
    }
    counts.add("head", affine_macs(cfg.flatten_dim(), cfg.num_classes));
    Ok(counts)
}

/// Per-sample tensor shapes at each interface of the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeReport {
    pub input: [usize; 3],
    pub stream_a: Option<[usize; 3]>,
    pub stream_b: Option<[usize; 3]>,
    pub fused_channels: Option<usize>,
    pub pooled: [usize; 3],
    pub flatten: usize,
    pub logits: usize,
}

pub fn shape_report(cfg: &FusionNetConfig) -> Result<ShapeReport> {
    cfg.validate()?;
    let s = cfg.backbone_spatial()?;
    let a = [cfg.backbone_a.out_channels(), s, s];
    let b = [cfg.backbone_b.out_channels(), s, s];
    Ok(ShapeReport {
        input: [3, cfg.input_hw, cfg.input_hw],
        stream_a: (cfg.arch != Architecture::StreamB).then_some(a),
        stream_b: (cfg.arch != Architecture::StreamA).then_some(b),
        fused_channels: (cfg.arch == Architecture::Fusion).then(|| cfg.fused_channels()),
        pooled: [cfg.pooled_channels(), cfg.pooled, cfg.pooled],
        flatten: cfg.flatten_dim(),
        logits: cfg.num_classes,
    })
}

impl fmt::Display for ShapeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims = |d: &[usize; 3]| format!("{}×{}×{}", d[0], d[1], d[2]);
        writeln!(f, "input      {}", dims(&self.input))?;
        if let Some(a) = &self.stream_a {
            writeln!(f, "stream_a   {}", dims(a))?;
        }
        if let Some(b) = &self.stream_b {
            writeln!(f, "stream_b   {}", dims(b))?;
        }
        if let Some(c) = self.fused_channels {
            writeln!(f, "fused      {c} channels")?;
        }
        writeln!(f, "pooled     {}", dims(&self.pooled))?;
        writeln!(f, "flatten    {}", self.flatten)?;
        writeln!(f, "logits     {}", self.logits)
    }
}
