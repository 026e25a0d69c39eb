//! Exact O(n²) t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 42,
        }
    }
}

pub const MAX_POINTS: usize = 5000;
const BISECTION_STEPS: usize = 50;
const BISECTION_TOL: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;
const TRACE_EVERY: usize = 10;

/// Row-major n×n squared Euclidean distances of the rows of `x` (n×d).
pub fn pairwise_sq_dists(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i * d..(i + 1) * d].iter().zip(&x[j * d..(j + 1) * d]).map(|(a, b)| (a - b) * (a - b)).sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Conditional affinities `P_{j|i}` with per-row precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct Affinities {
    pub n: usize,
    /// Row-major n×n; zero diagonal; each row sums to 1.
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
    /// Rows whose entropy missed the target within the step budget.
    pub unconverged: Vec<usize>,
}

/// Row `i` of P given precision `beta`; returns the entropy in bits.
fn row_probs(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = dist.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(dist).enumerate() {
        // shifting by the nearest distance keeps exp() away from underflow
        *o = if j == i { 0.0 } else { (-(d - dmin) * beta).exp() };
        z += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= z;
        if *o > 0.0 {
            h -= *o * o.log2();
        }
    }
    h
}

/// Per-row bisection on the Gaussian precision until the entropy equals
/// `log2(perplexity)` within a relative 1e-5, at most 50 steps.
pub fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Result<Affinities> {
    if n < 2 || dist.len() != n * n {
        return Err(Error::shape("conditional_affinities", format!("{} distances for n = {n}", dist.len())));
    }
    if !(perplexity > 1.0) {
        return Err(Error::invalid("conditional_affinities", format!("perplexity {perplexity} must exceed 1")));
    }
    let target = perplexity.log2();
    let mut p = vec![0.0; n * n];
    let mut beta = vec![1.0; n];
    let mut unconverged = Vec::new();
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / (n - 1) as f64;
        let mut b = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let out = &mut p[i * n..(i + 1) * n];
        let mut ok = false;
        for _ in 0..BISECTION_STEPS {
            let h = row_probs(row, i, b, out);
            let diff = h - target;
            if diff.abs() <= BISECTION_TOL * target {
                ok = true;
                break;
            }
            if diff > 0.0 {
                lo = b;
                b = if hi.is_finite() { 0.5 * (b + hi) } else { b * 2.0 };
            } else {
                hi = b;
                b = 0.5 * (b + lo);
            }
        }
        if !ok {
            let h = row_probs(row, i, b, out);
            if (h - target).abs() > BISECTION_TOL * target {
                unconverged.push(i);
            }
        }
        beta[i] = b;
    }
    Ok(Affinities { n, p, beta, unconverged })
}

/// `(P_{j|i} + P_{i|j}) / (2n)`.
pub fn joint_probabilities(cond: &Affinities) -> Vec<f64> {
    let n = cond.n;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (cond.p[i * n + j] + cond.p[j * n + i]) / (2.0 * n as f64);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    /// Row-major n×2.
    pub y: Vec<f64>,
    /// (iteration, KL(P‖Q)) every 10 iterations and at the end, measured
    /// against the un-exaggerated P.
    pub trace: Vec<(usize, f64)>,
    pub perplexity: f64,
    pub joint: Vec<f64>,
    pub unconverged_rows: usize,
}

impl TsneResult {
    pub fn initial_kl(&self) -> f64 {
        self.trace.first().map_or(f64::NAN, |t| t.1)
    }

    pub fn final_kl(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.1)
    }
}

/// Student-t affinities (unnormalized numerators and their sum).
fn q_numerators(y: &[f64], n: usize, num: &mut [f64]) -> f64 {
    let mut z = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    z
}

fn kl_divergence(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter().zip(num).filter(|(&p, _)| p > 0.0).map(|(&p, &q)| p * (p / (q / z).max(1e-300)).ln()).sum()
}

/// Embeds the n rows of `x` (n×d) in two dimensions.
pub fn tsne(x: &[f64], n: usize, d: usize, cfg: &TsneConfig) -> Result<TsneResult> {
    if n < 10 {
        return Err(Error::invalid("tsne", format!("need at least 10 points, got {n}")));
    }
    if n > MAX_POINTS {
        return Err(Error::invalid("tsne", format!("exact t-SNE is capped at {MAX_POINTS} points, got {n}")));
    }
    if d == 0 || x.len() != n * d {
        return Err(Error::shape("tsne", format!("{} values for {n}×{d}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("tsne", "non-finite input"));
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0);
    if perplexity < 2.0 {
        return Err(Error::invalid("tsne", format!("perplexity {perplexity} below 2")));
    }
    let dist = pairwise_sq_dists(x, n, d);
    if dist.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("tsne", "all rows are identical"));
    }
    let cond = conditional_affinities(&dist, n, perplexity)?;
    let p = joint_probabilities(&cond);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid sigma");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut update = vec![0.0f64; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut trace = Vec::new();

    for it in 0..cfg.iterations {
        let z = q_numerators(&y, n, &mut num);
        if it % TRACE_EVERY == 0 {
            trace.push((it, kl_divergence(&p, &num, z)));
        }
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch { cfg.momentum_initial } else { cfg.momentum_final };
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let m = (exag * p[i * n + j] - w / z) * w;
                grad[2 * i] += 4.0 * m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += 4.0 * m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) { gains[k] + 0.2 } else { gains[k] * 0.8 };
            gains[k] = gains[k].max(MIN_GAIN);
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for axis in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + axis] -= mean);
        }
    }
    let z = q_numerators(&y, n, &mut num);
    trace.push((cfg.iterations, kl_divergence(&p, &num, z)));
    Ok(TsneResult { y, trace, perplexity, joint: p, unconverged_rows: cond.unconverged.len() })
}

/// Fraction of points whose nearest other point (Euclidean, ties to the
/// lower index) carries the same label.
pub fn nearest_neighbor_agreement(y: &[f64], dim: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    let dist = pairwise_sq_dists(y, n, dim);
    let hits = (0..n)
        .filter(|&i| {
            let nn = (0..n).filter(|&j| j != i).fold(None, |best: Option<usize>, j| match best {
                Some(b) if dist[i * n + b] <= dist[i * n + j] => Some(b),
                _ => Some(j),
            });
            nn.is_some_and(|j| labels[j] == labels[i])
        })
        .count();
    hits as f64 / n as f64
}
