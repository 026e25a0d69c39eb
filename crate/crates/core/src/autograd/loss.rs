use super::{expect_rank, GradStore, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Floor applied to probabilities before taking their log.
pub const PROB_EPS: f64 = 1e-12;

/// Temperature softmax over the last axis of a row-major `rows×cols` block,
/// stabilized by max-subtraction.
pub fn softmax_rows<T: Real>(x: &[T], cols: usize, temperature: T) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (row, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = ((v - max) / temperature).exp();
            z += *d;
        }
        dst.iter_mut().for_each(|d| *d /= z);
    }
    out
}

/// log-softmax of one row at the given temperature.
pub fn log_softmax_row<T: Real>(row: &[T], temperature: T) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| ((v - max) / temperature).exp()).sum::<T>().ln();
    row.iter().map(|&v| (v - max) / temperature - lse).collect()
}

fn check_temperature<T: Real>(op: &'static str, t: T) -> Result<()> {
    if !(t > T::zero()) || !t.is_finite() {
        return Err(Error::invalid(op, format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// Σ_k P(k) ln(P(k)/Q(k)) per row, in nats; Q is floored at 1e-12 and
/// `0 · ln(0/q)` contributes 0.
fn kl_row<T: Real>(p: &[T], log_q: impl Iterator<Item = T>) -> T {
    let floor = T::of(PROB_EPS).ln();
    p.iter().zip(log_q).filter(|(&pk, _)| pk > T::zero()).map(|(&pk, lq)| pk * (pk.ln() - lq.max(floor))).sum()
}

impl<T: Real> Tape<T> {
    /// Row-wise `softmax(x / temperature)` over the last axis.
    pub fn softmax(&mut self, x: Var, temperature: T) -> Result<Var> {
        check_temperature("softmax", temperature)?;
        let cols = *self.shape(x).last().ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
        let out = softmax_rows(self.value(x), cols, temperature);
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax { x, temperature }))
    }

    /// `scale · Σ_i KL(softmax(teacher_i / T) ‖ softmax(student_i / T))`.
    ///
    /// `teacher_logits` enter as a constant, so no gradient can reach
    /// whatever produced them. Both sides go through the same log-softmax,
    /// so identical rows contribute exactly zero.
    pub fn kl_distill(&mut self, student: Var, teacher_logits: &[T], temperature: T, scale: T) -> Result<Var> {
        check_temperature("kl_distill", temperature)?;
        expect_rank("kl_distill", self.shape(student), 2)?;
        let (n, c) = (self.shape(student)[0], self.shape(student)[1]);
        if n == 0 {
            return Err(Error::invalid("kl_distill", "empty batch"));
        }
        if teacher_logits.len() != n * c {
            return Err(Error::shape("kl_distill", format!("teacher has {} values for {n}×{c}", teacher_logits.len())));
        }
        let sv = self.value(student);
        let mut total = T::zero();
        for (row, t) in sv.chunks(c).zip(teacher_logits.chunks(c)) {
            let log_p = log_softmax_row(t, temperature);
            let log_q = log_softmax_row(row, temperature);
            total += log_p.iter().zip(&log_q).map(|(&lp, &lq)| lp.exp() * (lp - lq)).sum::<T>();
        }
        let teacher_probs = softmax_rows(teacher_logits, c, temperature);
        let student_probs = softmax_rows(sv, c, temperature);
        Ok(self.push(
            vec![],
            vec![scale * total],
            Op::KlDistill { student, teacher_probs, student_probs, temperature, scale },
        ))
    }

    /// `scale · Σ_i −ln softmax(logits_i)[label_i]` at temperature 1.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], scale: T) -> Result<Var> {
        expect_rank("cross_entropy", self.shape(logits), 2)?;
        let (n, c) = (self.shape(logits)[0], self.shape(logits)[1]);
        if n == 0 || labels.len() != n {
            return Err(Error::shape("cross_entropy", format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid("cross_entropy", format!("label {bad} outside [0, {c})")));
        }
        let lv = self.value(logits);
        let mut total = T::zero();
        for (row, &label) in lv.chunks(c).zip(labels) {
            total -= log_softmax_row(row, T::one())[label];
        }
        let probs = softmax_rows(lv, c, T::one());
        Ok(self.push(vec![], vec![scale * total], Op::CrossEntropy { logits, labels: labels.to_vec(), probs, scale }))
    }
}

/// KL divergence between two probability rows, in nats.
pub fn kl_div<T: Real>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::shape("kl_div", format!("rows of length {} and {}", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|&v| v < T::zero() || !v.is_finite()) {
        return Err(Error::invalid("kl_div", "probabilities must be finite and non-negative"));
    }
    let tol = T::of(1e-5);
    for (name, row) in [("P", p), ("Q", q)] {
        let s: T = row.iter().copied().sum();
        if (s - T::one()).abs() > tol {
            return Err(Error::invalid("kl_div", format!("{name} sums to {s}, not 1")));
        }
    }
    let floor = T::of(PROB_EPS);
    Ok(kl_row(p, q.iter().map(|&qk| qk.max(floor).ln())).max(T::zero()))
}

pub(super) fn softmax_backward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    y: &[T],
    temperature: T,
    g: &[T],
    store: &mut GradStore<T>,
) {
    let cols = *tape.shape(x).last().expect("validated in forward");
    let Some(dst) = store.slot(tape, x) else { return };
    for ((d, yr), gr) in dst.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((di, &yi), &gi) in d.iter_mut().zip(yr).zip(gr) {
            *di += yi * (gi - dot) / temperature;
        }
    }
}
