use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f32; 3] = [0.2023, 0.1994, 0.2010];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preprocess {
    /// Target (height, width); `None` keeps the stored size.
    pub resize: Option<(usize, usize)>,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Preprocess {
    fn default() -> Self {
        Self { resize: None, mean: CIFAR_MEAN, std: CIFAR_STD }
    }
}

impl Preprocess {
    pub fn identity() -> Self {
        Self { resize: None, mean: [0.0; 3], std: [1.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("std", "entries must be positive"));
        }
        if let Some((h, w)) = self.resize {
            if h == 0 || w == 0 {
                return Err(Error::config("resize", "extents must be positive"));
            }
        }
        Ok(())
    }
}

/// Per channel `(x − mean) / std` on a 3×H×W image.
pub fn normalize(image: &Tensor<f32>, pre: &Preprocess) -> Result<Tensor<f32>> {
    pre.validate()?;
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("normalize", format!("expected 3×H×W, got {s:?}")));
    }
    let plane = s[1] * s[2];
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            (v - pre.mean[c]) / pre.std[c]
        })
        .collect();
    Tensor::new(s, data)
}

/// Catmull-Rom cubic (a = −0.5).
fn cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// For each output index, four clamped source indices and their weights
/// (half-pixel centre alignment, weights normalized to sum 1).
fn taps(n_in: usize, n_out: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let p = base + k as f64 - 1.0;
                idx[k] = p.clamp(0.0, (n_in - 1) as f64) as usize;
                w[k] = cubic(src - p);
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resize of a C×H×W image with edge clamping.
/// Same-size requests return the input unchanged.
pub fn resize_bicubic(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("resize_bicubic", format!("expected C×H×W, got {s:?}")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bicubic", "output extents must be positive"));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let (tx, ty) = (taps(w, out_w), taps(h, out_h));
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut rows = vec![0.0f64; h * out_w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for (x, (idx, wt)) in tx.iter().enumerate() {
                rows[y * out_w + x] = (0..4).map(|k| wt[k] * plane[y * w + idx[k]] as f64).sum();
            }
        }
        for (idx, wt) in &ty {
            for x in 0..out_w {
                let v: f64 = (0..4).map(|k| wt[k] * rows[idx[k] * out_w + x]).sum();
                out.push(v as f32);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}
