//! Computations behind the static demo page in `www/`. Plain Rust here;
//! the `wasm` module wraps each function for JavaScript.

mod wasm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use fusionnet::autograd::{bilinear_at, softmax_rows};
use fusionnet::distill::{total_loss, DistillConfig, TeacherOutputs};
use fusionnet::embed::{nearest_neighbor_agreement, tsne, TsneConfig};
use fusionnet::{Tape, Tensor};

fn err(e: fusionnet::Error) -> String {
    e.to_string()
}

/// One output position of a modulated deformable 3×3 convolution over a
/// single-channel `h`×`w` image.
///
/// `dy`, `dx` and `kernel` hold one entry per tap (`ky·3 + kx`). Returns
/// `[deformable output, plain 3×3 output, then (y, x, sample) per tap]`.
#[allow(clippy::too_many_arguments)]
pub fn deform_probe(
    image: &[f64],
    h: usize,
    w: usize,
    cy: usize,
    cx: usize,
    dy: &[f64],
    dx: &[f64],
    modulation: f64,
    kernel: &[f64],
) -> Result<Vec<f64>, String> {
    if image.len() != h * w || cy >= h || cx >= w {
        return Err(String::from("image size or probe position out of range"));
    }
    if dy.len() != 9 || dx.len() != 9 || kernel.len() != 9 {
        return Err(String::from("dy, dx and kernel need 9 entries"));
    }
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(&Tensor::new(&[1, 1, h, w], image.to_vec()).map_err(err)?);
    let k = tape.constant(&Tensor::new(&[1, 1, 3, 3], kernel.to_vec()).map_err(err)?);
    // offsets are only non-zero at the probed position
    let mut off = vec![0.0; 18 * h * w];
    for t in 0..9 {
        off[(2 * t) * h * w + cy * w + cx] = dy[t];
        off[(2 * t + 1) * h * w + cy * w + cx] = dx[t];
    }
    let off = tape.constant(&Tensor::new(&[1, 18, h, w], off).map_err(err)?);
    let m = tape.constant(&Tensor::full(&[1, 9, h, w], modulation));
    let deformed = tape.deform_conv2d(x, k, None, off, m, 1, 1).map_err(err)?;
    let plain = tape.conv2d(x, k, None, 1, 1).map_err(err)?;
    let mut out = vec![tape.value(deformed)[cy * w + cx], tape.value(plain)[cy * w + cx]];
    for t in 0..9 {
        let y = (cy + t / 3) as f64 - 1.0 + dy[t];
        let xx = (cx + t % 3) as f64 - 1.0 + dx[t];
        out.extend([y, xx, bilinear_at(image, h, w, y, xx)]);
    }
    Ok(out)
}

/// Loss terms for one sample. Returns `[kl, ce, total, student
/// probabilities at T…, mixed-teacher probabilities at T…]`.
pub fn distill_losses(
    student: &[f64],
    teacher_a: &[f64],
    teacher_b: &[f64],
    label: usize,
    alpha: f64,
    temperature: f64,
    literal_t2: bool,
) -> Result<Vec<f64>, String> {
    let c = student.len();
    if c < 2 || teacher_a.len() != c || teacher_b.len() != c || label >= c {
        return Err(String::from("logit vectors must share a length ≥ 2 and contain the label"));
    }
    let cfg = DistillConfig { temperature, alpha, literal_t2 };
    let row = |v: &[f64]| Tensor::new(&[1, c], v.to_vec()).map_err(err);
    let teachers = TeacherOutputs { logits_a: row(teacher_a)?, logits_b: row(teacher_b)? };
    let mut tape = Tape::new();
    let s = tape.constant(&row(student)?);
    let t = total_loss(&mut tape, s, &teachers, &[label], &cfg, None).map_err(err)?;
    let mixed: Vec<f64> = teacher_a.iter().zip(teacher_b).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    let mut out = vec![t.breakdown.kl, t.breakdown.ce, t.breakdown.total];
    out.extend(softmax_rows(student, c, temperature));
    out.extend(softmax_rows(&mixed, c, temperature));
    Ok(out)
}

/// Isotropic Gaussian clusters in 10 dimensions with centres on the axes,
/// `spacing` apart. Labels are `i / per_cluster`.
pub fn gaussian_clusters(clusters: usize, per_cluster: usize, spacing: f64, seed: u64) -> Vec<f64> {
    const DIM: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vec::with_capacity(clusters * per_cluster * DIM);
    for c in 0..clusters {
        for _ in 0..per_cluster {
            for k in 0..DIM {
                let centre = if k == c % DIM { spacing * (1 + c / DIM) as f64 } else { 0.0 };
                x.push(centre + noise.sample(&mut rng));
            }
        }
    }
    x
}

/// t-SNE of [`gaussian_clusters`]. Returns `[initial KL, final KL, 1-NN
/// label agreement, then x, y per point]`.
pub fn tsne_clusters(
    clusters: usize,
    per_cluster: usize,
    spacing: f64,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let n = clusters * per_cluster;
    let x = gaussian_clusters(clusters, per_cluster, spacing, seed);
    let cfg = TsneConfig { perplexity, iterations, seed, ..TsneConfig::default() };
    let r = tsne(&x, n, 10, &cfg).map_err(err)?;
    let labels: Vec<usize> = (0..n).map(|i| i / per_cluster).collect();
    let mut out = vec![r.initial_kl(), r.final_kl(), nearest_neighbor_agreement(&r.y, 2, &labels)];
    out.extend(&r.y);
    Ok(out)
}
