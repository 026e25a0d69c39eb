//! Bilinear sampling and modulated deformable convolution.
//!
//! Samples that fall outside the feature map read zeros: each of the four
//! neighbours contributes only when it lies inside the map.

use super::conv::conv_dims;
use super::{expect_rank, gemm, ConvGeom, GradStore, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Four-neighbour stencil for one sampling position.
struct Stencil<T> {
    idx: [Option<usize>; 4],
    w: [T; 4],
    dwy: [T; 4],
    dwx: [T; 4],
}

impl<T: Real> Stencil<T> {
    fn new(h: usize, w: usize, y: T, x: T) -> Self {
        let z = T::zero();
        let mut s = Stencil { idx: [None; 4], w: [z; 4], dwy: [z; 4], dwx: [z; 4] };
        let (hf, wf) = (T::of(h as f64), T::of(w as f64));
        if !(y > -T::one() && y < hf && x > -T::one() && x < wf) {
            return s;
        }
        let (y0, x0) = (y.floor(), x.floor());
        let (ly, lx) = (y - y0, x - x0);
        let (hy, hx) = (T::one() - ly, T::one() - lx);
        let (y0, x0) = (y0.to_isize().unwrap_or(-2), x0.to_isize().unwrap_or(-2));
        let corners = [(0isize, 0isize), (0, 1), (1, 0), (1, 1)];
        for (i, (dy, dx)) in corners.into_iter().enumerate() {
            let (cy, cx) = (y0 + dy, x0 + dx);
            let (wy, gy) = if dy == 0 { (hy, -T::one()) } else { (ly, T::one()) };
            let (wx, gx) = if dx == 0 { (hx, -T::one()) } else { (lx, T::one()) };
            s.w[i] = wy * wx;
            s.dwy[i] = gy * wx;
            s.dwx[i] = wy * gx;
            if cy >= 0 && cx >= 0 && (cy as usize) < h && (cx as usize) < w {
                s.idx[i] = Some(cy as usize * w + cx as usize);
            }
        }
        s
    }

    fn sample(&self, plane: &[T]) -> T {
        let mut v = T::zero();
        for (i, idx) in self.idx.iter().enumerate() {
            if let Some(j) = idx {
                v += self.w[i] * plane[*j];
            }
        }
        v
    }

    /// Scatters `g` into `dplane` and returns ∂/∂(y, x) of the sample times `g`.
    fn backprop(&self, plane: &[T], g: T, dplane: Option<&mut [T]>) -> (T, T) {
        let (mut gy, mut gx) = (T::zero(), T::zero());
        for (i, idx) in self.idx.iter().enumerate() {
            if let Some(j) = idx {
                gy += self.dwy[i] * plane[*j];
                gx += self.dwx[i] * plane[*j];
            }
        }
        if let Some(dp) = dplane {
            for (i, idx) in self.idx.iter().enumerate() {
                if let Some(j) = idx {
                    dp[*j] += g * self.w[i];
                }
            }
        }
        (g * gy, g * gx)
    }
}

/// Bilinear value of an `h×w` plane at real position `(y, x)`.
pub fn bilinear_at<T: Real>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    Stencil::new(h, w, y, x).sample(plane)
}

impl<T: Real> Tape<T> {
    /// Samples a C×H×W feature at P real `(y, x)` positions (coords P×2),
    /// giving C×P.
    pub fn bilinear_sample(&mut self, feature: Var, coords: Var) -> Result<Var> {
        expect_rank("bilinear_sample", self.shape(feature), 3)?;
        let cs = self.shape(coords);
        if cs.len() != 2 || cs[1] != 2 {
            return Err(Error::shape("bilinear_sample", format!("coords must be P×2, got {cs:?}")));
        }
        let p = cs[0];
        let (c, h, w) = (self.shape(feature)[0], self.shape(feature)[1], self.shape(feature)[2]);
        let (fv, cv) = (self.value(feature), self.value(coords));
        if cv.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("bilinear_sample", "non-finite coordinate"));
        }
        let mut out = vec![T::zero(); c * p];
        for q in 0..p {
            let st = Stencil::new(h, w, cv[2 * q], cv[2 * q + 1]);
            for ch in 0..c {
                out[ch * p + q] = st.sample(&fv[ch * h * w..(ch + 1) * h * w]);
            }
        }
        Ok(self.push(vec![c, p], out, Op::Bilinear { feature, coords }))
    }

    /// Modulated deformable convolution.
    ///
    /// `offsets` is N×(2·kh·kw)×H'×W' holding a (Δy, Δx) pair per kernel tap,
    /// `mods` is N×(kh·kw)×H'×W'. Tap `k = ky·kw + kx` at output `(y, x)`
    /// reads the input at `(y·s − pad + ky + Δy, x·s − pad + kx + Δx)` and is
    /// scaled by its modulation before the weighted sum.
    #[allow(clippy::too_many_arguments)]
    pub fn deform_conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        offsets: Var,
        mods: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom { stride, pad };
        let d = conv_dims("deform_conv2d", self.shape(x), self.shape(w), geom)?;
        let taps = d.kh * d.kw;
        let want_off = [d.n, 2 * taps, d.oh, d.ow];
        let want_mod = [d.n, taps, d.oh, d.ow];
        if self.shape(offsets) != want_off {
            return Err(Error::shape(
                "deform_conv2d",
                format!("offsets {:?}, expected {want_off:?}", self.shape(offsets)),
            ));
        }
        if self.shape(mods) != want_mod {
            return Err(Error::shape(
                "deform_conv2d",
                format!("modulations {:?}, expected {want_mod:?}", self.shape(mods)),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [d.o] {
                return Err(Error::shape("deform_conv2d", format!("bias {:?} for {} outputs", self.shape(b), d.o)));
            }
        }
        let (rows, p) = (d.rows(), d.cols());
        let mut out = vec![T::zero(); d.n * d.o * p];
        let mut cols = vec![T::zero(); rows * p];
        for s in 0..d.n {
            deform_im2col(self, [x, offsets, mods], s, &d, geom, &mut cols);
            let dst = &mut out[s * d.o * p..(s + 1) * d.o * p];
            if let Some(b) = b {
                for (o, &bo) in self.value(b).iter().enumerate() {
                    dst[o * p..(o + 1) * p].iter_mut().for_each(|e| *e = bo);
                }
            }
            gemm::nn(d.o, rows, p, self.value(w), &cols, dst);
        }
        Ok(self.push(vec![d.n, d.o, d.oh, d.ow], out, Op::DeformConv2d { x, w, b, offsets, mods, geom }))
    }
}

fn tap_position<T: Real>(
    off: &[T],
    k: usize,
    q: usize,
    oy: usize,
    ox: usize,
    d: &super::conv::ConvDims,
    geom: ConvGeom,
) -> (T, T) {
    let p = d.cols();
    let (ky, kx) = (k / d.kw, k % d.kw);
    let by = (oy * geom.stride + ky) as f64 - geom.pad as f64;
    let bx = (ox * geom.stride + kx) as f64 - geom.pad as f64;
    (T::of(by) + off[2 * k * p + q], T::of(bx) + off[(2 * k + 1) * p + q])
}

fn deform_im2col<T: Real>(
    tape: &Tape<T>,
    [x, offsets, mods]: [Var; 3],
    s: usize,
    d: &super::conv::ConvDims,
    geom: ConvGeom,
    cols: &mut [T],
) {
    let (p, taps, plane) = (d.cols(), d.kh * d.kw, d.h * d.w);
    let xv = &tape.value(x)[s * d.c * plane..(s + 1) * d.c * plane];
    let off = &tape.value(offsets)[s * 2 * taps * p..(s + 1) * 2 * taps * p];
    let md = &tape.value(mods)[s * taps * p..(s + 1) * taps * p];
    for k in 0..taps {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let q = oy * d.ow + ox;
                let (py, px) = tap_position(off, k, q, oy, ox, d, geom);
                let st = Stencil::new(d.h, d.w, py, px);
                let m = md[k * p + q];
                for c in 0..d.c {
                    cols[(c * taps + k) * p + q] = m * st.sample(&xv[c * plane..(c + 1) * plane]);
                }
            }
        }
    }
}

pub(super) fn deform_backward<T: Real>(
    tape: &Tape<T>,
    [x, w, offsets, mods]: [Var; 4],
    b: Option<Var>,
    geom: ConvGeom,
    g: &[T],
    store: &mut GradStore<T>,
) {
    let d = conv_dims("deform_conv2d", tape.shape(x), tape.shape(w), geom).expect("validated in forward");
    let (rows, p, taps, plane) = (d.rows(), d.cols(), d.kh * d.kw, d.h * d.w);
    let mut cols = vec![T::zero(); rows * p];
    let mut dcols = vec![T::zero(); rows * p];

    if let Some(b) = b {
        if let Some(db) = store.slot(tape, b) {
            for s in 0..d.n {
                for (o, dbo) in db.iter_mut().enumerate() {
                    *dbo += g[(s * d.o + o) * p..(s * d.o + o + 1) * p].iter().copied().sum();
                }
            }
        }
    }
    let want_x = store.slot(tape, x).is_some();
    let want_off = store.slot(tape, offsets).is_some();
    let want_mod = store.slot(tape, mods).is_some();
    let want_w = store.slot(tape, w).is_some();

    for s in 0..d.n {
        let gs = &g[s * d.o * p..(s + 1) * d.o * p];
        if want_w {
            deform_im2col(tape, [x, offsets, mods], s, &d, geom, &mut cols);
            gemm::nt(d.o, p, rows, gs, &cols, store.slot(tape, w).expect("checked"));
        }
        if !(want_x || want_off || want_mod) {
            continue;
        }
        dcols.iter_mut().for_each(|e| *e = T::zero());
        gemm::tn(rows, d.o, p, tape.value(w), gs, &mut dcols);

        let xv = &tape.value(x)[s * d.c * plane..(s + 1) * d.c * plane];
        let off = &tape.value(offsets)[s * 2 * taps * p..(s + 1) * 2 * taps * p];
        let md = &tape.value(mods)[s * taps * p..(s + 1) * taps * p];
        let mut dx_local = if want_x { vec![T::zero(); d.c * plane] } else { Vec::new() };
        let mut doff = vec![T::zero(); 2 * taps * p];
        let mut dmod = vec![T::zero(); taps * p];
        for k in 0..taps {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let q = oy * d.ow + ox;
                    let (py, px) = tap_position(off, k, q, oy, ox, &d, geom);
                    let st = Stencil::new(d.h, d.w, py, px);
                    let m = md[k * p + q];
                    let (mut gy, mut gx, mut gm) = (T::zero(), T::zero(), T::zero());
                    for c in 0..d.c {
                        let dc = dcols[(c * taps + k) * p + q];
                        if dc == T::zero() {
                            continue;
                        }
                        let pl = &xv[c * plane..(c + 1) * plane];
                        if want_mod {
                            gm += dc * st.sample(pl);
                        }
                        let dpl = if want_x { Some(&mut dx_local[c * plane..(c + 1) * plane]) } else { None };
                        let (ey, ex) = st.backprop(pl, dc * m, dpl);
                        gy += ey;
                        gx += ex;
                    }
                    doff[2 * k * p + q] = gy;
                    doff[(2 * k + 1) * p + q] = gx;
                    dmod[k * p + q] = gm;
                }
            }
        }
        if let Some(dst) = store.slot(tape, x) {
            dst[s * d.c * plane..(s + 1) * d.c * plane].iter_mut().zip(&dx_local).for_each(|(a, &v)| *a += v);
        }
        if let Some(dst) = store.slot(tape, offsets) {
            dst[s * 2 * taps * p..(s + 1) * 2 * taps * p].iter_mut().zip(&doff).for_each(|(a, &v)| *a += v);
        }
        if let Some(dst) = store.slot(tape, mods) {
            dst[s * taps * p..(s + 1) * taps * p].iter_mut().zip(&dmod).for_each(|(a, &v)| *a += v);
        }
    }
}

pub(super) fn bilinear_backward<T: Real>(tape: &Tape<T>, feature: Var, coords: Var, g: &[T], store: &mut GradStore<T>) {
    let (c, h, w) = (tape.shape(feature)[0], tape.shape(feature)[1], tape.shape(feature)[2]);
    let p = tape.shape(coords)[0];
    let (fv, cv) = (tape.value(feature), tape.value(coords));
    let mut dfeat = vec![T::zero(); c * h * w];
    let mut dcoord = vec![T::zero(); 2 * p];
    for q in 0..p {
        let st = Stencil::new(h, w, cv[2 * q], cv[2 * q + 1]);
        for ch in 0..c {
            let (ey, ex) = st.backprop(
                &fv[ch * h * w..(ch + 1) * h * w],
                g[ch * p + q],
                Some(&mut dfeat[ch * h * w..(ch + 1) * h * w]),
            );
            dcoord[2 * q] += ey;
            dcoord[2 * q + 1] += ex;
        }
    }
    if let Some(dst) = store.slot(tape, feature) {
        dst.iter_mut().zip(&dfeat).for_each(|(a, &v)| *a += v);
    }
    if let Some(dst) = store.slot(tape, coords) {
        dst.iter_mut().zip(&dcoord).for_each(|(a, &v)| *a += v);
    }
}
