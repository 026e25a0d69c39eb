//! Reference implementations and a finite-difference oracle written
//! directly from the definitions, sharing no code with the library.

#![allow(dead_code)]

pub mod accum;
pub mod suite;

use fusionnet::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Central differences with step `1e-5 · max(1, |x|)`.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, 1e-5)`; the floor keeps vanishing gradients
/// from turning rounding noise into large relative errors.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Worst relative error between reverse-mode gradients of `f` and central
/// differences, over every entry of every input.
pub fn fd_max_rel_err<F>(inputs: &[(Vec<usize>, Vec<f64>)], f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let bind = |tape: &mut Tape<f64>, vals: &[Vec<f64>]| -> Vec<Var> {
        inputs.iter().zip(vals).map(|((shape, _), v)| tape.param(&Tensor::new(shape, v.clone()).unwrap())).collect()
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut tape = Tape::new();
    let vars = bind(&mut tape, &base);
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let analytic = grads.get_or_zeros(&tape, vars[k]);
        let g = |x: &[f64]| {
            let mut vals = base.clone();
            vals[k] = x.to_vec();
            let mut t = Tape::new();
            let vs = bind(&mut t, &vals);
            let o = f(&mut t, &vs);
            t.scalar(o)
        };
        let numeric = central_diff(&g, &base[k]);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}

/// Direct seven-loop convolution (batch, out channel, out y, out x, in
/// channel, ky, kx) with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv_naive(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    (o, k): (usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[oc]);
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[((oc * c + ic) * k + ky) * k + kx]
                                    * x[((b * c + ic) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Bilinear interpolation with every out-of-range corner reading zero.
pub fn bilinear_naive(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let at = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    (1.0 - fy) * (1.0 - fx) * at(y0, x0)
        + (1.0 - fy) * fx * at(y0, x0 + 1.0)
        + fy * (1.0 - fx) * at(y0 + 1.0, x0)
        + fy * fx * at(y0 + 1.0, x0 + 1.0)
}

/// Modulated deformable 3×3 convolution evaluated tap by tap. Offsets
/// are N×18×OH×OW with channel 2k holding Δy and 2k+1 holding Δx for tap
/// k = ky·3 + kx; modulations are N×9×OH×OW.
#[allow(clippy::too_many_arguments)]
pub fn deform_naive(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    wt: &[f64],
    o: usize,
    bias: Option<&[f64]>,
    offsets: &[f64],
    mods: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - 3) / stride + 1;
    let ow = (w + 2 * pad - 3) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                for tap in 0..9 {
                    let (ky, kx) = (tap / 3, tap % 3);
                    let dy = offsets[((b * 18 + 2 * tap) * oh + y) * ow + xx];
                    let dx = offsets[((b * 18 + 2 * tap + 1) * oh + y) * ow + xx];
                    let m = mods[((b * 9 + tap) * oh + y) * ow + xx];
                    let py = (y * stride + ky) as f64 - pad as f64 + dy;
                    let px = (xx * stride + kx) as f64 - pad as f64 + dx;
                    for ic in 0..c {
                        let plane = &x[(b * c + ic) * h * w..(b * c + ic + 1) * h * w];
                        let v = m * bilinear_naive(plane, h, w, py, px);
                        for oc in 0..o {
                            out[((b * o + oc) * oh + y) * ow + xx] += wt[((oc * c + ic) * 3 + ky) * 3 + kx] * v;
                        }
                    }
                }
                for oc in 0..o {
                    out[((b * o + oc) * oh + y) * ow + xx] += bias.map_or(0.0, |bv| bv[oc]);
                }
            }
        }
    }
    out
}

/// Adaptive average pooling: output cell i covers input rows
/// ⌊i·H/out⌋ .. ⌈(i+1)·H/out⌉.
pub fn pool_naive(x: &[f64], (nc, h, w): (usize, usize, usize), oh: usize, ow: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(nc * oh * ow);
    for p in 0..nc {
        for i in 0..oh {
            let (y0, y1) = ((i * h) as f64 / oh as f64, ((i + 1) * h) as f64 / oh as f64);
            for j in 0..ow {
                let (x0, x1) = ((j * w) as f64 / ow as f64, ((j + 1) * w) as f64 / ow as f64);
                let (mut s, mut cnt) = (0.0, 0.0);
                for yy in y0.floor() as usize..y1.ceil() as usize {
                    for xx in x0.floor() as usize..x1.ceil() as usize {
                        s += x[(p * h + yy) * w + xx];
                        cnt += 1.0;
                    }
                }
                out.push(s / cnt);
            }
        }
    }
    out
}

/// Numerically careful softmax of one row at temperature `t`.
pub fn softmax_naive(row: &[f64], t: f64) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| ((v - m) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}
