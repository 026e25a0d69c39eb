use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Noise level used by the `synth:` data spec.
pub const SYNTH_NOISE: f64 = 0.1;

/// Noise-free template of class `c`: oriented stripes, a class tint and a
/// soft blob at a class-specific position.
fn template(c: usize, classes: usize, hw: usize) -> Vec<f64> {
    let cf = c as f64 / classes as f64;
    let theta = PI * cf;
    let freq = 2.0 + (c % 3) as f64;
    let tint: Vec<f64> = (0..3).map(|ch| 0.5 + 0.5 * (2.0 * PI * (cf + ch as f64 / 3.0)).cos()).collect();
    let (by, bx) = (((c as f64 * 0.37 + 0.2) % 1.0) * hw as f64, ((c as f64 * 0.61 + 0.3) % 1.0) * hw as f64);
    let radius = hw as f64 / 5.0;
    let mut out = vec![0.0; 3 * hw * hw];
    for ch in 0..3 {
        for y in 0..hw {
            for x in 0..hw {
                let (yf, xf) = (y as f64, x as f64);
                let u = (theta.cos() * xf + theta.sin() * yf) / hw as f64;
                let stripes = (2.0 * PI * freq * u).sin();
                let d2 = ((yf - by).powi(2) + (xf - bx).powi(2)) / (radius * radius);
                let blob = (-d2).exp();
                out[(ch * hw + y) * hw + x] = 0.35 + 0.2 * stripes * (0.5 + tint[ch]) + 0.35 * blob * tint[ch];
            }
        }
    }
    out
}

/// `n_per_class` images per class, each its class template plus Gaussian
/// pixel noise of standard deviation `noise`, clamped to [0, 1]. Samples
/// are grouped by class.
pub fn synth_dataset(
    num_classes: usize,
    n_per_class: usize,
    image_hw: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::invalid("synth_dataset", "need at least two classes"));
    }
    if n_per_class == 0 || image_hw == 0 {
        return Err(Error::invalid("synth_dataset", "sizes must be positive"));
    }
    let dist = Normal::new(0.0, noise).map_err(|e| Error::invalid("synth_dataset", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = 3 * image_hw * image_hw;
    let mut data = Vec::with_capacity(num_classes * n_per_class * per);
    let mut labels = Vec::with_capacity(num_classes * n_per_class);
    for c in 0..num_classes {
        let t = template(c, num_classes, image_hw);
        for _ in 0..n_per_class {
            data.extend(t.iter().map(|&v| {
                let n = if noise > 0.0 { dist.sample(&mut rng) } else { 0.0 };
                (v + n).clamp(0.0, 1.0) as f32
            }));
            labels.push(c);
        }
    }
    let names = (0..num_classes).map(|c| format!("synth{c}")).collect();
    LabeledDataset::new(
        Tensor::new(&[labels.len(), 3, image_hw, image_hw], data)?,
        labels,
        names,
        format!("synth:{num_classes}x{n_per_class}x{image_hw}"),
    )
}
