//! Epoch loop shared by plain supervised training, teacher training and
//! distillation, plus the two-teacher distillation pipeline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::data::LabeledDataset;
use crate::distill::{ce_loss, total_loss, DistillConfig, TeacherOutputs};
use crate::embed::{evaluate, infer, EvalReport};
use crate::error::{Error, Result};
use crate::model::{l2_penalty, model_forward, Architecture, ForwardOptions, FusionNetConfig, ModelParams};
use crate::optim::{accumulate_and_step, cosine_lr, AdamState, Batch, BatchLoss, TrainConfig};

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Parameters initialized from the run seed.
pub fn init_params(cfg: &FusionNetConfig, seed: u64) -> Result<ModelParams<f32>> {
    ModelParams::init(cfg, &mut stream(seed, INIT_STREAM))
}

/// Training objective.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Cross-entropy on hard labels plus the L2 term.
    CrossEntropy,
    /// Distillation loss; `teachers` holds both teachers' logits for every
    /// training sample, in dataset order.
    Distill { teachers: TeacherOutputs<f32>, cfg: DistillConfig },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the optimizer-step losses.
    pub loss: f64,
    /// Population variance of the optimizer-step losses.
    pub loss_variance: f64,
    pub kl: f64,
    pub ce: f64,
    pub l2: f64,
    pub test_accuracy: Option<f64>,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,lr,loss,loss_variance,kl,ce,l2,test_accuracy";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let acc = self.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.lr, self.loss, self.loss_variance, self.kl, self.ce, self.l2, acc
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn epochs_csv(&self, header_comment: &str) -> String {
        let mut s = String::new();
        if !header_comment.is_empty() {
            s.push_str(&format!("# {header_comment}\n"));
        }
        s.push_str(EPOCH_CSV_HEADER);
        s.push('\n');
        for r in &self.epochs {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Splits a permutation into batches and groups consecutive equal-sized
/// batches into accumulation groups of at most `k`.
fn groups(order: &[usize], batch: usize, k: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out: Vec<Vec<Vec<usize>>> = Vec::new();
    for b in order.chunks(batch) {
        match out.last_mut() {
            Some(g) if g.len() < k && g[0].len() == b.len() => g.push(b.to_vec()),
            _ => out.push(vec![b.to_vec()]),
        }
    }
    out
}

fn make_batch(ds: &LabeledDataset, idx: &[usize], teachers: Option<&TeacherOutputs<f32>>) -> Result<Batch<f32>> {
    Ok(Batch {
        images: ds.images.select_rows(idx)?,
        labels: idx.iter().map(|&i| ds.labels[i]).collect(),
        teacher_a: teachers.map(|t| t.logits_a.select_rows(idx)).transpose()?,
        teacher_b: teachers.map(|t| t.logits_b.select_rows(idx)).transpose()?,
    })
}

/// Trains `params` on `train` for `tc.total_epochs` epochs with the cosine
/// schedule stepped per epoch. `on_epoch` sees every finished epoch.
pub fn train(
    cfg: &FusionNetConfig,
    mut params: ModelParams<f32>,
    train: &LabeledDataset,
    test: Option<&LabeledDataset>,
    tc: &TrainConfig,
    objective: &Objective,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    params.validate(cfg)?;
    if train.is_empty() {
        return Err(Error::invalid("train", "empty training set"));
    }
    for (what, ds) in std::iter::once(("training", train)).chain(test.map(|t| ("test", t))) {
        if ds.num_classes() != cfg.num_classes {
            return Err(Error::config(
                "num_classes",
                format!("model has {} classes, {what} data has {}", cfg.num_classes, ds.num_classes()),
            ));
        }
    }
    let teachers = match objective {
        Objective::Distill { teachers, cfg: dc } => {
            dc.validate()?;
            let want = [train.len(), cfg.num_classes];
            if teachers.logits_a.shape() != want || teachers.logits_b.shape() != want {
                return Err(Error::config(
                    "num_classes",
                    format!(
                        "teacher logits {:?} / {:?} do not match {want:?}",
                        teachers.logits_a.shape(),
                        teachers.logits_b.shape()
                    ),
                ));
            }
            Some(teachers)
        }
        Objective::CrossEntropy => None,
    };

    let mut shuffle = stream(tc.seed, SHUFFLE_STREAM);
    let mut dropout = stream(tc.seed, DROPOUT_STREAM);
    let mut state = AdamState::new(&params);
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..tc.total_epochs {
        let lr = cosine_lr(epoch as f64, tc)?;
        order.shuffle(&mut shuffle);
        let mut parts = [0.0f64; 3];
        let mut batches_seen = 0usize;
        let mut epoch_steps = Vec::new();
        for group in groups(&order, tc.batch_size, tc.accumulation_steps) {
            let batches = group.iter().map(|idx| make_batch(train, idx, teachers)).collect::<Result<Vec<_>>>()?;
            let losses =
                accumulate_and_step(&mut params, &mut state, &batches, lr, tc, |tape: &mut Tape<f32>, p, b| {
                    let x = tape.constant(&b.images);
                    let pass = model_forward(tape, cfg, p, x, ForwardOptions::train(), &mut dropout)?;
                    let l2 = l2_penalty(tape, cfg, p, &pass);
                    let loss = match objective {
                        Objective::CrossEntropy => {
                            let ce = ce_loss(tape, pass.logits, &b.labels, 0.0)?;
                            parts[1] += tape.scalar(ce) as f64;
                            tape.add(ce, l2)?
                        }
                        Objective::Distill { cfg: dc, .. } => {
                            let t = TeacherOutputs {
                                logits_a: b.teacher_a.clone().expect("distill batches carry teachers"),
                                logits_b: b.teacher_b.clone().expect("distill batches carry teachers"),
                            };
                            let total = total_loss(tape, pass.logits, &t, &b.labels, dc, Some(l2))?;
                            parts[0] += total.breakdown.kl as f64;
                            parts[1] += total.breakdown.ce as f64;
                            total.loss
                        }
                    };
                    parts[2] += tape.scalar(l2) as f64;
                    Ok(BatchLoss { loss, pass })
                })?;
            batches_seen += losses.len();
            let step = losses.iter().map(|&l| l as f64).sum::<f64>() / losses.len() as f64;
            if !step.is_finite() {
                return Err(Error::invalid("train", format!("loss became non-finite in epoch {epoch}")));
            }
            epoch_steps.push(step);
        }
        let m = epoch_steps.iter().sum::<f64>() / epoch_steps.len() as f64;
        let var = epoch_steps.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / epoch_steps.len() as f64;
        let test_accuracy = test.map(|t| evaluate(cfg, &params, t).map(|r| r.accuracy)).transpose()?;
        let nb = batches_seen as f64;
        let rec = EpochRecord {
            epoch,
            lr,
            loss: m,
            loss_variance: var,
            kl: parts[0] / nb,
            ce: parts[1] / nb,
            l2: parts[2] / nb,
            test_accuracy,
        };
        on_epoch(&rec);
        epochs.push(rec);
        step_losses.extend(epoch_steps);
    }
    Ok(TrainOutcome { params, epochs, step_losses })
}

/// Both teachers' eval-mode logits on every sample of `ds`.
pub fn teacher_logits(
    teacher_a: (&FusionNetConfig, &ModelParams<f32>),
    teacher_b: (&FusionNetConfig, &ModelParams<f32>),
    ds: &LabeledDataset,
) -> Result<TeacherOutputs<f32>> {
    for (name, (cfg, _)) in [("teacher_a", teacher_a), ("teacher_b", teacher_b)] {
        if cfg.num_classes != ds.num_classes() {
            return Err(Error::config(
                "num_classes",
                format!("{name} has {} classes, data has {}", cfg.num_classes, ds.num_classes()),
            ));
        }
    }
    Ok(TeacherOutputs {
        logits_a: infer(teacher_a.0, teacher_a.1, &ds.images)?.0,
        logits_b: infer(teacher_b.0, teacher_b.1, &ds.images)?.0,
    })
}

/// Single-stream teacher configurations derived from a fusion config.
pub fn teacher_configs(student: &FusionNetConfig) -> (FusionNetConfig, FusionNetConfig) {
    (student.clone().with_arch(Architecture::StreamA), student.clone().with_arch(Architecture::StreamB))
}

/// A frozen teacher with its own configuration.
pub type Teacher = (FusionNetConfig, ModelParams<f32>);

/// Result of [`run_distillation`].
#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub teacher_a: Teacher,
    pub teacher_b: Teacher,
    /// Which teachers were trained here rather than supplied.
    pub trained_teachers: (bool, bool),
    pub distilled: TrainOutcome,
    pub plain: TrainOutcome,
    pub distilled_report: EvalReport,
    pub plain_report: EvalReport,
}

impl DistillOutcome {
    /// Distilled minus plain held-out accuracy.
    pub fn accuracy_gain(&self) -> f64 {
        self.distilled_report.accuracy - self.plain_report.accuracy
    }

    pub fn report_csv(&self, header_comment: &str) -> String {
        let mut s = String::new();
        if !header_comment.is_empty() {
            s.push_str(&format!("# {header_comment}\n"));
        }
        s.push_str("metric,value\n");
        s.push_str(&format!("distilled_accuracy,{}\n", self.distilled_report.accuracy));
        s.push_str(&format!("plain_accuracy,{}\n", self.plain_report.accuracy));
        s.push_str(&format!("difference,{}\n", self.accuracy_gain()));
        s.push_str(&format!("test_samples,{}\n", self.distilled_report.samples));
        s
    }
}

/// Trains missing teachers with cross-entropy (single-stream variants of
/// the student), freezes them, then trains the student twice from the same
/// initialization: once with the distillation loss and once with plain
/// cross-entropy.
pub fn run_distillation(
    student: &FusionNetConfig,
    teachers: (Option<Teacher>, Option<Teacher>),
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    tc: &TrainConfig,
    dc: &DistillConfig,
) -> Result<DistillOutcome> {
    student.validate()?;
    dc.validate()?;
    let (cfg_a, cfg_b) = teacher_configs(student);
    let trained_teachers = (teachers.0.is_none(), teachers.1.is_none());
    let fit = |name: &str, derived: FusionNetConfig, given: Option<Teacher>| -> Result<Teacher> {
        match given {
            Some((cfg, p)) => {
                if cfg.num_classes != student.num_classes {
                    return Err(Error::config(
                        "num_classes",
                        format!("{name} has {} classes, student has {}", cfg.num_classes, student.num_classes),
                    ));
                }
                p.validate(&cfg)?;
                Ok((cfg, p))
            }
            None => {
                let p = train(
                    &derived,
                    init_params(&derived, tc.seed)?,
                    train_ds,
                    None,
                    tc,
                    &Objective::CrossEntropy,
                    |_| {},
                )?
                .params;
                Ok((derived, p))
            }
        }
    };
    let teacher_a = fit("teacher_a", cfg_a, teachers.0)?;
    let teacher_b = fit("teacher_b", cfg_b, teachers.1)?;
    let logits = teacher_logits((&teacher_a.0, &teacher_a.1), (&teacher_b.0, &teacher_b.1), train_ds)?;

    let init = init_params(student, tc.seed)?;
    let objective = Objective::Distill { teachers: logits, cfg: *dc };
    let distilled = train(student, init.clone(), train_ds, None, tc, &objective, |_| {})?;
    let plain = train(student, init, train_ds, None, tc, &Objective::CrossEntropy, |_| {})?;
    let distilled_report = evaluate(student, &distilled.params, test_ds)?;
    let plain_report = evaluate(student, &plain.params, test_ds)?;
    Ok(DistillOutcome { teacher_a, teacher_b, trained_teachers, distilled, plain, distilled_report, plain_report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_keeps_sizes_equal() {
        let order: Vec<usize> = (0..37).collect();
        let g = groups(&order, 8, 4);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].len(), 4);
        assert_eq!(g[1], vec![(32..37).collect::<Vec<_>>()]);
        let g = groups(&order, 5, 1);
        assert_eq!(g.len(), 8);
    }

    #[test]
    fn epoch_csv_layout() {
        let rec = EpochRecord {
            epoch: 0,
            lr: 1e-4,
            loss: 1.5,
            loss_variance: 0.0,
            kl: 0.0,
            ce: 1.5,
            l2: 0.0,
            test_accuracy: None,
        };
        assert_eq!(rec.csv_row(), "0,0.0001,1.5,0,0,1.5,0,");
    }
}
