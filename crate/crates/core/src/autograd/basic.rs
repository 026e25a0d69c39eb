use rand::Rng;

use super::{expect_rank, gemm, GradStore, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Real};

impl<T: Real> Tape<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).iter().map(|&e| e * c).collect();
        self.push(self.shape(x).to_vec(), v, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![], vec![s], Op::Sum(x))
    }

    /// Σ x ⊙ w for a constant weight array; turns any tensor output into a
    /// scalar probe for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, w: Vec<T>) -> Result<Var> {
        if w.len() != self.value(x).len() {
            return Err(Error::shape("weighted_sum", format!("{} weights for {:?}", w.len(), self.shape(x))));
        }
        let s = self.value(x).iter().zip(&w).map(|(&a, &b)| a * b).sum();
        Ok(self.push(vec![], vec![s], Op::WeightedSum(x, w)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&e| e.max(T::zero())).collect();
        self.push(self.shape(x).to_vec(), v, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&e| e.tanh()).collect();
        self.push(self.shape(x).to_vec(), v, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&e| logistic(e)).collect();
        self.push(self.shape(x).to_vec(), v, Op::Sigmoid(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        Ok(self.push(shape.to_vec(), self.value(x).to_vec(), Op::Reshape(x)))
    }

    /// N×C×H×W → N×(C·H·W), row-major.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let Some(&n) = shape.first() else {
            return Err(Error::shape("flatten", "rank-0 input"));
        };
        let rest = numel(&shape[1..]);
        self.reshape(x, &[n, rest])
    }

    /// Concatenates along axis 1; `a` occupies the leading channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape("concat_channels", format!("{sa:?} vs {sb:?}")));
        }
        let (n, ca, cb, inner) = (sa[0], sa[1], sb[1], numel(&sa[2..]));
        let mut shape = sa.to_vec();
        shape[1] = ca + cb;
        let (va, vb) = (self.value(a), self.value(b));
        let mut v = Vec::with_capacity(n * (ca + cb) * inner);
        for s in 0..n {
            v.extend_from_slice(&va[s * ca * inner..(s + 1) * ca * inner]);
            v.extend_from_slice(&vb[s * cb * inner..(s + 1) * cb * inner]);
        }
        Ok(self.push(shape, v, Op::Concat { a, b }))
    }

    /// Channels `[start, start + len)` along axis 1.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() < 2 || start + len > sx[1] {
            return Err(Error::shape("narrow_channels", format!("[{start}, {}) of {sx:?}", start + len)));
        }
        let (n, c, inner) = (sx[0], sx[1], numel(&sx[2..]));
        let mut shape = sx.to_vec();
        shape[1] = len;
        let vx = self.value(x);
        let mut v = Vec::with_capacity(n * len * inner);
        for s in 0..n {
            let base = (s * c + start) * inner;
            v.extend_from_slice(&vx[base..base + len * inner]);
        }
        Ok(self.push(shape, v, Op::Narrow { x, start }))
    }

    /// Inverted dropout: kept units are scaled by 1/(1−p) so that
    /// evaluation mode is the identity. The mask is drawn in row-major
    /// order, so consecutive calls over consecutive sample ranges draw the
    /// same mask as one call over the whole range.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("rate {p} outside [0, 1)")));
        }
        if !training {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> =
            (0..self.value(x).len()).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let v = self.value(x).iter().zip(&mask).map(|(&e, &m)| e * m).collect();
        Ok(self.push(self.shape(x).to_vec(), v, Op::Dropout { x, mask }))
    }

    /// x[N×D] · w[C×D]ᵀ + b[C]
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        expect_rank("linear", self.shape(x), 2)?;
        expect_rank("linear", self.shape(w), 2)?;
        let (n, d) = (self.shape(x)[0], self.shape(x)[1]);
        let (c, dw) = (self.shape(w)[0], self.shape(w)[1]);
        if d != dw {
            return Err(Error::shape("linear", format!("input width {d} vs weight {:?}", self.shape(w))));
        }
        if let Some(b) = b {
            if self.shape(b) != [c] {
                return Err(Error::shape("linear", format!("bias {:?} for {c} outputs", self.shape(b))));
            }
        }
        let mut out = vec![T::zero(); n * c];
        if let Some(b) = b {
            let bv = self.value(b);
            out.chunks_mut(c).for_each(|row| row.copy_from_slice(bv));
        }
        gemm::nt(n, d, c, self.value(x), self.value(w), &mut out);
        Ok(self.push(vec![n, c], out, Op::Linear { x, w, b }))
    }

    /// scale · Σ_v ‖v‖²
    pub fn sum_squares(&mut self, xs: &[Var], scale: T) -> Var {
        let mut s = T::zero();
        for &v in xs {
            s += self.value(v).iter().map(|&e| e * e).sum();
        }
        self.push(vec![], vec![scale * s], Op::SumSquares { xs: xs.to_vec(), scale })
    }
}

pub(crate) fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(super) fn mul_backward<T: Real>(tape: &Tape<T>, a: Var, b: Var, g: &[T], store: &mut GradStore<T>) {
    if let Some(dst) = store.slot(tape, a) {
        dst.iter_mut().zip(g.iter().zip(tape.value(b))).for_each(|(d, (&gi, &y))| *d += gi * y);
    }
    if let Some(dst) = store.slot(tape, b) {
        dst.iter_mut().zip(g.iter().zip(tape.value(a))).for_each(|(d, (&gi, &x))| *d += gi * x);
    }
}

pub(super) fn relu_backward<T: Real>(tape: &Tape<T>, x: Var, g: &[T], store: &mut GradStore<T>) {
    if let Some(dst) = store.slot(tape, x) {
        for ((d, &gi), &xi) in dst.iter_mut().zip(g).zip(tape.value(x)) {
            if xi > T::zero() {
                *d += gi;
            }
        }
    }
}

pub(super) fn tanh_backward<T: Real>(tape: &Tape<T>, x: Var, y: &[T], g: &[T], store: &mut GradStore<T>) {
    if let Some(dst) = store.slot(tape, x) {
        for ((d, &gi), &yi) in dst.iter_mut().zip(g).zip(y) {
            *d += gi * (T::one() - yi * yi);
        }
    }
}

pub(super) fn sigmoid_backward<T: Real>(tape: &Tape<T>, x: Var, y: &[T], g: &[T], store: &mut GradStore<T>) {
    if let Some(dst) = store.slot(tape, x) {
        for ((d, &gi), &yi) in dst.iter_mut().zip(g).zip(y) {
            *d += gi * yi * (T::one() - yi);
        }
    }
}

pub(super) fn concat_backward<T: Real>(tape: &Tape<T>, a: Var, b: Var, g: &[T], store: &mut GradStore<T>) {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    let (n, ca, cb, inner) = (sa[0], sa[1], sb[1], numel(&sa[2..]));
    let row = (ca + cb) * inner;
    if let Some(dst) = store.slot(tape, a) {
        for s in 0..n {
            let src = &g[s * row..s * row + ca * inner];
            dst[s * ca * inner..(s + 1) * ca * inner].iter_mut().zip(src).for_each(|(d, &x)| *d += x);
        }
    }
    if let Some(dst) = store.slot(tape, b) {
        for s in 0..n {
            let src = &g[s * row + ca * inner..(s + 1) * row];
            dst[s * cb * inner..(s + 1) * cb * inner].iter_mut().zip(src).for_each(|(d, &x)| *d += x);
        }
    }
}

pub(super) fn narrow_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    start: usize,
    out_shape: &[usize],
    g: &[T],
    store: &mut GradStore<T>,
) {
    let sx = tape.shape(x);
    let (n, c, inner) = (sx[0], sx[1], numel(&sx[2..]));
    let len = out_shape[1];
    if let Some(dst) = store.slot(tape, x) {
        for s in 0..n {
            let base = (s * c + start) * inner;
            let src = &g[s * len * inner..(s + 1) * len * inner];
            dst[base..base + len * inner].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
        }
    }
}

pub(super) fn linear_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
    store: &mut GradStore<T>,
) {
    let (n, d) = (tape.shape(x)[0], tape.shape(x)[1]);
    let c = tape.shape(w)[0];
    if let Some(dst) = store.slot(tape, x) {
        gemm::nn(n, c, d, g, tape.value(w), dst);
    }
    if let Some(dst) = store.slot(tape, w) {
        gemm::tn(c, n, d, g, tape.value(x), dst);
    }
    if let Some(b) = b {
        if let Some(dst) = store.slot(tape, b) {
            for row in g.chunks(c) {
                dst.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
            }
        }
    }
}
