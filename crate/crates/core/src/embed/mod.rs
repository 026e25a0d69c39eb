//! Evaluation metrics, feature extraction, exact t-SNE and scatter output.

mod svg;
mod tsne;

pub use svg::{emit_scatter_svg, render_scatter_svg, PALETTE};
pub use tsne::{
    conditional_affinities, joint_probabilities, nearest_neighbor_agreement, pairwise_sq_dists, tsne, Affinities,
    TsneConfig, TsneResult, MAX_POINTS,
};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{model_forward, ForwardOptions, FusionNetConfig, ModelParams};
use crate::tensor::{Real, Tensor};

/// Samples per forward pass during inference.
pub const INFER_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[t][p]`: samples of true class `t` predicted as `p`.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    pub samples: usize,
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl EvalReport {
    /// Scores row-major `logits` (N×classes) against `labels`.
    pub fn from_logits<T: Real>(logits: &[T], classes: usize, labels: &[usize]) -> Result<Self> {
        if classes == 0 || logits.len() != labels.len() * classes {
            return Err(Error::shape(
                "evaluate",
                format!("{} logits for {} labels × {classes}", logits.len(), labels.len()),
            ));
        }
        if labels.is_empty() {
            return Err(Error::invalid("evaluate", "empty dataset"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid("evaluate", format!("label {bad} but model has {classes} classes")));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (row, &t) in logits.chunks(classes).zip(labels) {
            confusion[t][argmax(row)] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Self { accuracy: correct as f64 / labels.len() as f64, confusion, per_class, samples: labels.len() })
    }

    /// `metric,value` rows: accuracy, sample count, per-class accuracy.
    pub fn metrics_csv(&self, header_comment: &str) -> String {
        let mut s = String::new();
        if !header_comment.is_empty() {
            let _ = writeln!(s, "# {header_comment}");
        }
        s.push_str("metric,value\n");
        let _ = writeln!(s, "accuracy,{}", self.accuracy);
        let _ = writeln!(s, "samples,{}", self.samples);
        for (c, a) in self.per_class.iter().enumerate() {
            match a {
                Some(a) => writeln!(s, "class_accuracy_{c},{a}"),
                None => writeln!(s, "class_accuracy_{c},"),
            }
            .expect("string write");
        }
        s
    }

    /// Confusion matrix with true classes as rows.
    pub fn confusion_csv(&self, header_comment: &str) -> String {
        let mut s = String::new();
        if !header_comment.is_empty() {
            let _ = writeln!(s, "# {header_comment}");
        }
        s.push_str("true\\pred");
        for c in 0..self.confusion.len() {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{t}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Eval-mode logits (N×classes) and post-flatten features (N×D) for
/// every image, in batches of [`INFER_BATCH`].
pub fn infer<T: Real>(
    cfg: &FusionNetConfig,
    params: &ModelParams<T>,
    images: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let n = images.shape().first().copied().unwrap_or(0);
    let (mut logits, mut feats) = (Vec::new(), Vec::new());
    // eval mode never draws from the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for start in (0..n).step_by(INFER_BATCH) {
        let rows: Vec<usize> = (start..(start + INFER_BATCH).min(n)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(&images.select_rows(&rows)?);
        let pass = model_forward(&mut tape, cfg, params, x, ForwardOptions::eval(), &mut rng)?;
        logits.extend_from_slice(tape.value(pass.logits));
        feats.extend_from_slice(tape.value(pass.features));
    }
    Ok((Tensor::new(&[n, cfg.num_classes], logits)?, Tensor::new(&[n, cfg.flatten_dim()], feats)?))
}

pub fn evaluate(cfg: &FusionNetConfig, params: &ModelParams<f32>, ds: &LabeledDataset) -> Result<EvalReport> {
    if ds.num_classes() != cfg.num_classes {
        return Err(Error::config(
            "num_classes",
            format!("model has {} classes, dataset has {}", cfg.num_classes, ds.num_classes()),
        ));
    }
    let (logits, _) = infer(cfg, params, &ds.images)?;
    EvalReport::from_logits(logits.data(), cfg.num_classes, &ds.labels)
}

/// Post-flatten, pre-head activations (N×flatten_dim) in eval mode.
pub fn extract_features(cfg: &FusionNetConfig, params: &ModelParams<f32>, ds: &LabeledDataset) -> Result<Tensor<f32>> {
    Ok(infer(cfg, params, &ds.images)?.1)
}

/// `index,label,x,y` rows for a 2-D embedding.
pub fn embedding_csv(y: &[f64], labels: &[usize], header_comment: &str) -> Result<String> {
    if y.len() != 2 * labels.len() {
        return Err(Error::shape("embedding_csv", format!("{} coordinates for {} labels", y.len(), labels.len())));
    }
    let mut s = String::new();
    if !header_comment.is_empty() {
        let _ = writeln!(s, "# {header_comment}");
    }
    s.push_str("index,label,x,y\n");
    for (i, (p, l)) in y.chunks(2).zip(labels).enumerate() {
        let _ = writeln!(s, "{i},{l},{},{}", p[0], p[1]);
    }
    Ok(s)
}
