//! Two-teacher knowledge distillation losses.
//!
//! The teachers' raw logits are mixed convexly, softened at temperature T
//! and matched by the student through a KL term; a hard-label cross-entropy
//! at temperature 1 is added with the complementary weight.

use crate::autograd::{Tape, Var};
use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    /// `true`: the KL term is `α/(N T²) · Σ KL · T²`, whose temperature
    /// factors cancel. `false`: conventional `α/N · Σ KL · T²`.
    pub literal_t2: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { temperature: 3.0, alpha: 0.5, literal_t2: true }
    }
}

pub const DISTILL_KEYS: &[&str] = &["temperature", "alpha", "literal_t2"];

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("temperature", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Multiplier applied to `Σ_i KL_i` for a batch of `n`.
    pub fn kl_scale(&self, n: usize) -> f64 {
        let (a, t, n) = (self.alpha, self.temperature, n as f64);
        if self.literal_t2 {
            a / (n * t * t) * (t * t)
        } else {
            a / n * (t * t)
        }
    }

    pub fn to_kv(&self, doc: &mut KvDoc) {
        doc.set("temperature", self.temperature);
        doc.set("alpha", self.alpha);
        doc.set("literal_t2", self.literal_t2);
    }

    /// Reads the distillation keys, falling back to defaults for absent ones.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            temperature: doc.parse_opt("temperature")?.unwrap_or(d.temperature),
            alpha: doc.parse_opt("alpha")?.unwrap_or(d.alpha),
            literal_t2: doc.parse_opt("literal_t2")?.unwrap_or(d.literal_t2),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Raw logits of the two frozen teachers on the same batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherOutputs<T> {
    pub logits_a: Tensor<T>,
    pub logits_b: Tensor<T>,
}

/// `α · A + (1 − α) · B` on raw logits.
pub fn teacher_mixture<T: Real>(teachers: &TeacherOutputs<T>, alpha: f64) -> Result<Tensor<T>> {
    let (a, b) = (&teachers.logits_a, &teachers.logits_b);
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(Error::shape(
            "teacher_mixture",
            format!("teacher logits must be matching N×C, got {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("teacher_mixture", format!("alpha {alpha} outside [0, 1]")));
    }
    let (wa, wb) = (T::of(alpha), T::of(1.0 - alpha));
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| wa * x + wb * y).collect();
    Tensor::new(a.shape(), data)
}

/// Temperature-softened KL between the mixed teacher and the student.
/// The teacher side enters the tape as a constant.
pub fn kl_loss<T: Real>(
    tape: &mut Tape<T>,
    student: Var,
    mixed_teacher: &Tensor<T>,
    cfg: &DistillConfig,
) -> Result<Var> {
    cfg.validate()?;
    let ss = tape.shape(student).to_vec();
    if ss.len() != 2 || mixed_teacher.shape() != ss.as_slice() {
        return Err(Error::shape("kl_loss", format!("student {ss:?} vs teacher {:?}", mixed_teacher.shape())));
    }
    if ss[0] == 0 {
        return Err(Error::invalid("kl_loss", "empty batch"));
    }
    let t = T::of(cfg.temperature);
    tape.kl_distill(student, mixed_teacher.data(), t, T::of(cfg.kl_scale(ss[0])))
}

/// `(1 − α) · mean_i −ln softmax(student_i)[label_i]`.
pub fn ce_loss<T: Real>(tape: &mut Tape<T>, student: Var, labels: &[usize], alpha: f64) -> Result<Var> {
    let n = tape.shape(student).first().copied().unwrap_or(0);
    if n == 0 {
        return Err(Error::invalid("ce_loss", "empty batch"));
    }
    tape.cross_entropy(student, labels, T::of((1.0 - alpha) / n as f64))
}

/// Component values of a [`total_loss`]; `(kl + ce) + l2 == total` bitwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub kl: T,
    pub ce: T,
    pub l2: T,
    pub total: T,
}

#[derive(Clone, Copy, Debug)]
pub struct TotalLoss<T> {
    pub loss: Var,
    pub kl: Var,
    pub ce: Var,
    pub breakdown: LossBreakdown<T>,
}

/// `KL + CE (+ L2)`, summed as `(kl + ce) + l2` on the tape.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    student: Var,
    teachers: &TeacherOutputs<T>,
    labels: &[usize],
    cfg: &DistillConfig,
    l2: Option<Var>,
) -> Result<TotalLoss<T>> {
    let mixed = teacher_mixture(teachers, cfg.alpha)?;
    let kl = kl_loss(tape, student, &mixed, cfg)?;
    let ce = ce_loss(tape, student, labels, cfg.alpha)?;
    let mut loss = tape.add(kl, ce)?;
    let mut l2_value = T::zero();
    if let Some(l2) = l2 {
        l2_value = tape.scalar(l2);
        loss = tape.add(loss, l2)?;
    }
    let breakdown = LossBreakdown { kl: tape.scalar(kl), ce: tape.scalar(ce), l2: l2_value, total: tape.scalar(loss) };
    Ok(TotalLoss { loss, kl, ce, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{kl_div, softmax_rows};

    fn logits(rows: &[&[f64]]) -> Tensor<f64> {
        let c = rows[0].len();
        Tensor::new(&[rows.len(), c], rows.concat()).unwrap()
    }

    #[test]
    fn mixture_endpoints_and_symmetry() {
        let t = TeacherOutputs { logits_a: logits(&[&[2.0, 0.0]]), logits_b: logits(&[&[0.0, 2.0]]) };
        assert_eq!(teacher_mixture(&t, 1.0).unwrap(), t.logits_a);
        let m = teacher_mixture(&t, 0.5).unwrap();
        assert_eq!(m.data(), &[1.0, 1.0]);
        assert_eq!(softmax_rows(m.data(), 2, 1.0), vec![0.5, 0.5]);
        let bad = TeacherOutputs { logits_a: logits(&[&[1.0, 2.0]]), logits_b: logits(&[&[1.0, 2.0, 3.0]]) };
        assert!(teacher_mixture(&bad, 0.5).is_err());
    }

    #[test]
    fn hand_evaluated_kl_term() {
        let cfg = DistillConfig::default();
        let mut tape = Tape::new();
        let s = tape.constant(&logits(&[&[0.0, 0.0]]));
        let kl = kl_loss(&mut tape, s, &logits(&[&[2.0, 0.0]]), &cfg).unwrap();
        let v = tape.scalar(kl);
        let p = softmax_rows(&[2.0 / 3.0, 0.0], 2, 1.0);
        let want = 0.5 * kl_div(&p, &[0.5, 0.5]).unwrap();
        assert!((v - want).abs() < 1e-12, "{v} vs {want}");
    }

    #[test]
    fn uniform_ce_is_ln_classes() {
        let mut tape = Tape::new();
        let s = tape.constant(&Tensor::<f64>::zeros(&[4, 10]));
        let ce = ce_loss(&mut tape, s, &[0, 3, 9, 5], 0.0).unwrap();
        let v = tape.scalar(ce);
        assert!((v - 10f64.ln()).abs() < 1e-12);
        let ce = ce_loss(&mut tape, s, &[0, 3, 9, 5], 1.0).unwrap();
        let v = tape.scalar(ce);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn modes_agree_at_unit_temperature() {
        for n in [1, 3, 7] {
            let lit = DistillConfig { temperature: 1.0, alpha: 0.3, literal_t2: true };
            let conv = DistillConfig { literal_t2: false, ..lit };
            assert_eq!(lit.kl_scale(n), conv.kl_scale(n));
        }
        let conv = DistillConfig { literal_t2: false, ..DistillConfig::default() };
        assert!((conv.kl_scale(2) - 0.5 / 2.0 * 9.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(DistillConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
        let doc = KvDoc::parse("alpha = 0.25").unwrap();
        let cfg = DistillConfig::from_kv(&doc).unwrap();
        assert_eq!((cfg.alpha, cfg.temperature, cfg.literal_t2), (0.25, 3.0, true));
    }
}
