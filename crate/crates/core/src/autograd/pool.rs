use super::{expect_rank, GradStore, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Real};

/// Half-open input window `[start, end)` feeding output cell `i` of `out`.
fn window(i: usize, input: usize, out: usize) -> (usize, usize) {
    let start = i * input / out;
    let end = ((i + 1) * input).div_ceil(out);
    (start, end)
}

const NORM_EPS: f64 = 1e-5;

impl<T: Real> Tape<T> {
    /// Adaptive average pooling of an N×C×H×W map to N×C×out_h×out_w.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        expect_rank("adaptive_avg_pool", self.shape(x), 4)?;
        let s = self.shape(x);
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
            return Err(Error::shape("adaptive_avg_pool", format!("cannot pool {h}x{w} to {out_h}x{out_w}")));
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for nc in 0..n * c {
            let plane = &xv[nc * h * w..(nc + 1) * h * w];
            for oy in 0..out_h {
                let (y0, y1) = window(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = window(ox, w, out_w);
                    let mut acc = T::zero();
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += plane[yy * w + xx];
                        }
                    }
                    out[(nc * out_h + oy) * out_w + ox] = acc / T::of(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        Ok(self.push(vec![n, c, out_h, out_w], out, Op::AvgPool(x)))
    }

    /// Normalizes each sample to zero mean and unit variance over all its
    /// non-batch elements. Uses no batch statistics.
    pub fn sample_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(Error::shape("sample_norm", format!("need a batch axis, got {s:?}")));
        }
        let (n, m) = (s[0], numel(&s[1..]));
        let xv = self.value(x);
        let mut out = vec![T::zero(); n * m];
        let mut inv_std = Vec::with_capacity(n);
        let eps = T::of(NORM_EPS);
        for i in 0..n {
            let row = &xv[i * m..(i + 1) * m];
            let mean = row.iter().copied().sum::<T>() / T::of(m as f64);
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::of(m as f64);
            let inv = T::one() / (var + eps).sqrt();
            for (o, &v) in out[i * m..(i + 1) * m].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        Ok(self.push(s.to_vec(), out, Op::SampleNorm { x, inv_std }))
    }
}

pub(super) fn avg_pool_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    out_shape: &[usize],
    g: &[T],
    store: &mut GradStore<T>,
) {
    let s = tape.shape(x);
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (out_h, out_w) = (out_shape[2], out_shape[3]);
    let Some(dst) = store.slot(tape, x) else { return };
    for nc in 0..n * c {
        let plane = &mut dst[nc * h * w..(nc + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1) = window(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1) = window(ox, w, out_w);
                let share = g[(nc * out_h + oy) * out_w + ox] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        plane[yy * w + xx] += share;
                    }
                }
            }
        }
    }
}

pub(super) fn sample_norm_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    y: &[T],
    inv_std: &[T],
    g: &[T],
    store: &mut GradStore<T>,
) {
    let n = inv_std.len();
    let m = y.len() / n;
    let Some(dst) = store.slot(tape, x) else { return };
    let mf = T::of(m as f64);
    for i in 0..n {
        let (yr, gr) = (&y[i * m..(i + 1) * m], &g[i * m..(i + 1) * m]);
        let sum_g: T = gr.iter().copied().sum();
        let sum_gy: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
        for ((d, &gi), &yi) in dst[i * m..(i + 1) * m].iter_mut().zip(gr).zip(yr) {
            *d += inv_std[i] * (gi - sum_g / mf - yi * sum_gy / mf);
        }
    }
}
