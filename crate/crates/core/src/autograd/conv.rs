use super::{expect_rank, gemm, ConvGeom, GradStore, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(super) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

pub(super) fn conv_dims(op: &'static str, xs: &[usize], ws: &[usize], geom: ConvGeom) -> Result<ConvDims> {
    expect_rank(op, xs, 4)?;
    expect_rank(op, ws, 4)?;
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, ci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if c != ci {
        return Err(Error::shape(op, format!("input has {c} channels, weight {ws:?} expects {ci}")));
    }
    let oh = conv_out_extent(h, kh, geom.stride, geom.pad);
    let ow = conv_out_extent(w, kw, geom.stride, geom.pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(ConvDims { n, c, h, w, o, kh, kw, oh, ow }),
        _ => Err(Error::shape(
            op,
            format!("kernel {kh}x{kw} does not fit {h}x{w} input with pad {} stride {}", geom.pad, geom.stride),
        )),
    }
}

fn check_bias<T: Real>(op: &'static str, tape: &Tape<T>, b: Option<Var>, o: usize) -> Result<()> {
    match b {
        Some(b) if tape.shape(b) != [o] => {
            Err(Error::shape(op, format!("bias {:?} for {o} output channels", tape.shape(b))))
        }
        _ => Ok(()),
    }
}

/// Unfolds one sample (C×H×W) into a (C·kh·kw)×(oh·ow) column matrix.
fn im2col<T: Real>(x: &[T], d: &ConvDims, geom: ConvGeom, cols: &mut [T]) {
    let p = d.cols();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    for ox in 0..d.ow {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        dst[oy * d.ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                            x[(c * d.h + iy as usize) * d.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], d: &ConvDims, geom: ConvGeom, dx: &mut [T]) {
    let p = d.cols();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..d.oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy as usize >= d.h {
                        continue;
                    }
                    for ox in 0..d.ow {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && (ix as usize) < d.w {
                            dx[(c * d.h + iy as usize) * d.w + ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// 2-D convolution, NCHW input and OIKK weight.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom { stride, pad };
        let d = conv_dims("conv2d", self.shape(x), self.shape(w), geom)?;
        check_bias("conv2d", self, b, d.o)?;
        let (rows, p) = (d.rows(), d.cols());
        let mut out = vec![T::zero(); d.n * d.o * p];
        let mut cols = vec![T::zero(); rows * p];
        let (xv, wv) = (self.value(x), self.value(w));
        for s in 0..d.n {
            im2col(&xv[s * d.c * d.h * d.w..(s + 1) * d.c * d.h * d.w], &d, geom, &mut cols);
            let dst = &mut out[s * d.o * p..(s + 1) * d.o * p];
            if let Some(b) = b {
                for (o, &bo) in self.value(b).iter().enumerate() {
                    dst[o * p..(o + 1) * p].iter_mut().for_each(|e| *e = bo);
                }
            }
            gemm::nn(d.o, rows, p, wv, &cols, dst);
        }
        Ok(self.push(vec![d.n, d.o, d.oh, d.ow], out, Op::Conv2d { x, w, b, geom }))
    }
}

pub(super) fn conv2d_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
    g: &[T],
    store: &mut GradStore<T>,
) {
    let d = conv_dims("conv2d", tape.shape(x), tape.shape(w), geom).expect("validated in forward");
    let (rows, p) = (d.rows(), d.cols());
    let in_len = d.c * d.h * d.w;
    let mut cols = vec![T::zero(); rows * p];
    let mut dcols = vec![T::zero(); rows * p];
    let xv = tape.value(x);
    let wv = tape.value(w);

    if let Some(b) = b {
        if let Some(db) = store.slot(tape, b) {
            for s in 0..d.n {
                for (o, dbo) in db.iter_mut().enumerate() {
                    *dbo += g[(s * d.o + o) * p..(s * d.o + o + 1) * p].iter().copied().sum();
                }
            }
        }
    }
    if store.slot(tape, w).is_some() {
        for s in 0..d.n {
            im2col(&xv[s * in_len..(s + 1) * in_len], &d, geom, &mut cols);
            let dw = store.slot(tape, w).expect("checked");
            gemm::nt(d.o, p, rows, &g[s * d.o * p..(s + 1) * d.o * p], &cols, dw);
        }
    }
    if let Some(dx) = store.slot(tape, x) {
        for s in 0..d.n {
            dcols.iter_mut().for_each(|e| *e = T::zero());
            gemm::tn(rows, d.o, p, wv, &g[s * d.o * p..(s + 1) * d.o * p], &mut dcols);
            col2im(&dcols, &d, geom, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
}
