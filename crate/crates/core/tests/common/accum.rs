//! Gradients of one optimiser step under k-way accumulation.

use fusionnet::data::synth_dataset;
use fusionnet::distill::ce_loss;
use fusionnet::model::{l2_penalty, model_forward, ForwardOptions, FusionNetConfig, ModelParams, Preset};
use fusionnet::optim::{accumulate_gradients, Batch, BatchLoss};
use fusionnet::train::init_params;
use fusionnet::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn grads_for(cfg: &FusionNetConfig, params: &ModelParams<f64>, batches: &[Batch<f64>], training: bool) -> Vec<f64> {
    let mut p = params.clone();
    p.zero_grad();
    let mut dropout = ChaCha8Rng::seed_from_u64(99);
    let opts = if training { ForwardOptions::train() } else { ForwardOptions::eval() };
    accumulate_gradients(&mut p, batches, |tape: &mut Tape<f64>, p, b| {
        let x = tape.constant(&b.images);
        let pass = model_forward(tape, cfg, p, x, opts, &mut dropout)?;
        let ce = ce_loss(tape, pass.logits, &b.labels, 0.0)?;
        let l2 = l2_penalty(tape, cfg, p, &pass);
        Ok(BatchLoss { loss: tape.add(ce, l2)?, pass })
    })
    .unwrap();
    p.tensors.iter().flat_map(|t| t.tensor.grad().expect("gradient present").to_vec()).collect()
}

pub fn batches(cfg: &FusionNetConfig, k: usize, size: usize) -> Vec<Batch<f64>> {
    let ds = synth_dataset(cfg.num_classes, 12, cfg.input_hw, 0.3, 5).unwrap();
    let images = ds.images.cast::<f64>();
    (0..k)
        .map(|b| {
            let idx: Vec<usize> = (b * size..(b + 1) * size).collect();
            Batch {
                images: images.select_rows(&idx).unwrap(),
                labels: idx.iter().map(|&i| ds.labels[i]).collect(),
                teacher_a: None,
                teacher_b: None,
            }
        })
        .collect()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

/// Worst entry of `k` batches of `size` against one batch of `k · size`,
/// relative to the largest gradient magnitude, on the desk preset in f64.
pub fn desk_split_error(k: usize, size: usize, training: bool) -> f64 {
    let cfg = FusionNetConfig::preset(Preset::Desk);
    let params = init_params(&cfg, 11).unwrap().cast::<f64>();
    let split = grads_for(&cfg, &params, &batches(&cfg, k, size), training);
    let whole = grads_for(&cfg, &params, &batches(&cfg, 1, k * size), training);
    assert_eq!(split.len(), whole.len());
    max_rel(&split, &whole)
}
