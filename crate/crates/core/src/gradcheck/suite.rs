//! Fixed battery of gradient checks over every differentiable operator,
//! each at three randomized instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, GradCheckReport};
use crate::autograd::{Tape, Var};
use crate::deform::{fusion_forward, predict_offsets_modulations, FusionVars, Modulation, OFFSET_CHANNELS, TAPS};
use crate::distill::{ce_loss, kl_loss, teacher_mixture, total_loss, DistillConfig, TeacherOutputs};
use crate::error::Result;
use crate::model::{model_forward_bound, param_specs, ForwardOptions, FusionNetConfig};
use crate::tensor::Tensor;

pub const INSTANCES: usize = 3;

#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub instance: usize,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Random probe weights turn a tensor output into a scalar.
fn probe(tape: &mut Tape<f64>, out: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = (0..tape.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    tape.weighted_sum(out, w)
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn check_conv(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let (stride, pad) = [(1, 1), (2, 0), (1, 2)][i];
    let x = uniform(rng, &[2, 2, 5, 5], -1.0, 1.0);
    let w = uniform(rng, &[3, 2, 3, 3], -1.0, 1.0);
    let b = uniform(rng, &[3], -1.0, 1.0);
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let y = tape.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            probe(tape, y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[("x", x), ("weight", w), ("bias", b)],
        tol,
    )
}

fn check_bilinear(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let (h, w) = [(5, 5), (4, 6), (3, 7)][i];
    let feat = uniform(rng, &[2, h, w], -1.0, 1.0);
    // reaches past the borders so zero-padded corners are exercised
    let coords = Tensor::from_fn(&[12, 2], |k| {
        let ext = if k % 2 == 0 { h } else { w } as f64;
        rng.random_range(-0.9..ext - 0.1)
    });
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let y = tape.bilinear_sample(v[0], v[1])?;
            probe(tape, y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[("feature", feat), ("coords", coords)],
        tol,
    )
}

fn check_deform(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let (stride, pad) = [(1, 1), (2, 1), (1, 0)][i];
    let (hw, cin, cout) = (5, 2, 2);
    let out = (hw + 2 * pad - 3) / stride + 1;
    let x = uniform(rng, &[1, cin, hw, hw], -1.0, 1.0);
    let w = uniform(rng, &[cout, cin, 3, 3], -1.0, 1.0);
    let b = uniform(rng, &[cout], -1.0, 1.0);
    let off = uniform(rng, &[1, OFFSET_CHANNELS, out, out], -1.5, 1.5);
    let m = uniform(rng, &[1, TAPS, out, out], 0.0, 1.0);
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let y = tape.deform_conv2d(v[0], v[1], Some(v[2]), v[3], v[4], stride, pad)?;
            probe(tape, y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[("x", x), ("weight", w), ("bias", b), ("offsets", off), ("modulations", m)],
        tol,
    )
}

fn check_softmax(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let t = [1.0, 3.0, 0.5][i];
    let x = uniform(rng, &[3, 4], -2.0, 2.0);
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let y = tape.softmax(v[0], t)?;
            probe(tape, y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[("logits", x)],
        tol,
    )
}

fn check_pool(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let (h, w, oh, ow) = [(5, 7, 3, 2), (4, 4, 2, 2), (6, 5, 4, 3)][i];
    let x = uniform(rng, &[2, 2, h, w], -1.0, 1.0);
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let y = tape.adaptive_avg_pool(v[0], oh, ow)?;
            probe(tape, y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[("x", x)],
        tol,
    )
}

fn check_norm(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let shape = [[2, 3, 3, 3], [1, 2, 4, 2], [3, 1, 2, 2]][i];
    let x = uniform(rng, &shape, -2.0, 2.0);
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let y = tape.sample_norm(v[0])?;
            probe(tape, y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[("x", x)],
        tol,
    )
}

fn check_head(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let (n, d, c) = [(2, 6, 4), (3, 5, 2), (1, 8, 3)][i];
    let x = uniform(rng, &[n, d], -1.0, 1.0);
    let w = uniform(rng, &[c, d], -1.0, 1.0);
    let b = uniform(rng, &[c], -1.0, 1.0);
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let y = tape.linear(v[0], v[1], Some(v[2]))?;
            probe(tape, y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[("features", x), ("weight", w), ("bias", b)],
        tol,
    )
}

fn distill_cfg(i: usize) -> DistillConfig {
    let (temperature, alpha, literal_t2) = [(1.0, 0.5, true), (3.0, 0.3, true), (2.0, 0.8, false)][i];
    DistillConfig { temperature, alpha, literal_t2 }
}

fn teachers(rng: &mut ChaCha8Rng, n: usize, c: usize) -> TeacherOutputs<f64> {
    TeacherOutputs { logits_a: uniform(rng, &[n, c], -3.0, 3.0), logits_b: uniform(rng, &[n, c], -3.0, 3.0) }
}

fn check_kl(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let cfg = distill_cfg(i);
    let s = uniform(rng, &[3, 4], -2.0, 2.0);
    let mixed = teacher_mixture(&teachers(rng, 3, 4), cfg.alpha)?;
    grad_check(|tape, v| kl_loss(tape, v[0], &mixed, &cfg), &[("student", s)], tol)
}

fn check_ce(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let alpha = [0.0, 0.5, 0.9][i];
    let s = uniform(rng, &[4, 3], -2.0, 2.0);
    let y = labels(rng, 4, 3);
    grad_check(|tape, v| ce_loss(tape, v[0], &y, alpha), &[("student", s)], tol)
}

fn check_total(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let cfg = distill_cfg(i);
    let s = uniform(rng, &[3, 4], -2.0, 2.0);
    let w = uniform(rng, &[4, 5], -1.0, 1.0);
    let t = teachers(rng, 3, 4);
    let y = labels(rng, 3, 4);
    grad_check(
        |tape, v| {
            let l2 = tape.sum_squares(&[v[1]], 1e-2);
            Ok(total_loss(tape, v[0], &t, &y, &cfg, Some(l2))?.loss)
        },
        &[("student", s), ("decayed_weight", w)],
        tol,
    )
}

fn check_fusion(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let (ca, cb, hw, out, pooled) = [(2, 1, 4, 2, 2), (1, 2, 3, 3, 2), (2, 2, 5, 2, 3)][i];
    let cin = ca + cb;
    let a = uniform(rng, &[1, ca, hw, hw], -1.0, 1.0);
    let b = uniform(rng, &[1, cb, hw, hw], -1.0, 1.0);
    let mw = uniform(rng, &[out, cin, 3, 3], -0.5, 0.5);
    let mb = uniform(rng, &[out], -0.5, 0.5);
    // a nonzero predictor moves sampling off the integer grid
    let pw = uniform(rng, &[OFFSET_CHANNELS + TAPS, cin, 3, 3], -0.3, 0.3);
    let pb = uniform(rng, &[OFFSET_CHANNELS + TAPS], -0.7, 0.7);
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let vars = FusionVars { main_weight: v[2], main_bias: v[3], predictor_weight: v[4], predictor_bias: v[5] };
            let trace = fusion_forward(tape, v[0], v[1], &vars, pooled, Modulation::Learned)?;
            probe(tape, trace.pooled, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[
            ("stream_a", a),
            ("stream_b", b),
            ("main_weight", mw),
            ("main_bias", mb),
            ("predictor_weight", pw),
            ("predictor_bias", pb),
        ],
        tol,
    )
}

fn check_predictor(rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let (cin, hw) = [(2, 3), (3, 4), (1, 5)][i];
    let x = uniform(rng, &[1, cin, hw, hw], -1.0, 1.0);
    let pw = uniform(rng, &[OFFSET_CHANNELS + TAPS, cin, 3, 3], -0.5, 0.5);
    let pb = uniform(rng, &[OFFSET_CHANNELS + TAPS], -0.5, 0.5);
    let mw = Tensor::zeros(&[1, cin, 3, 3]);
    let mb = Tensor::zeros(&[1]);
    let seed = rng.random();
    grad_check(
        |tape, v| {
            let vars = FusionVars {
                main_weight: tape.constant(&mw),
                main_bias: tape.constant(&mb),
                predictor_weight: v[1],
                predictor_bias: v[2],
            };
            let (off, m) = predict_offsets_modulations(tape, v[0], &vars)?;
            let both = tape.concat_channels(off, m)?;
            probe(tape, both, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        &[("fused", x), ("predictor_weight", pw), ("predictor_bias", pb)],
        tol,
    )
}

fn check_model(cfg: &FusionNetConfig, rng: &mut ChaCha8Rng, i: usize, tol: f64) -> Result<GradCheckReport> {
    let n = [2, 1, 3][i];
    let specs = param_specs(cfg);
    let mut inputs: Vec<(&str, Tensor<f64>)> = specs
        .iter()
        .map(|s| {
            let fan_in: usize = s.shape[1..].iter().product::<usize>().max(1);
            let bound = (1.0 / fan_in as f64).sqrt();
            (s.name.as_str(), uniform(rng, &s.shape, -bound, bound))
        })
        .collect();
    let images = uniform(rng, &[n, 3, cfg.input_hw, cfg.input_hw], -1.0, 1.0);
    let y = labels(rng, n, cfg.num_classes);
    let decay: Vec<bool> = specs.iter().map(|s| s.decay).collect();
    let lambda = cfg.l2_lambda;
    let dropout_seed: u64 = rng.random();
    inputs.push(("images", images));
    grad_check(
        |tape, v| {
            let (params, img) = v.split_at(v.len() - 1);
            // the same mask on every evaluation keeps the function fixed
            let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let pass = model_forward_bound(tape, cfg, params.to_vec(), img[0], ForwardOptions::train(), &mut drop_rng)?;
            let ce = ce_loss(tape, pass.logits, &y, 0.0)?;
            let decayed: Vec<Var> = params.iter().zip(&decay).filter(|(_, &d)| d).map(|(&p, _)| p).collect();
            let l2 = tape.sum_squares(&decayed, lambda);
            tape.add(ce, l2)
        },
        &inputs,
        tol,
    )
}

/// Names of the operators covered by [`op_suite`], in run order.
pub const SUITE_OPS: [&str; 13] = [
    "conv2d",
    "bilinear_sample",
    "deform_conv2d",
    "softmax_t",
    "adaptive_avg_pool",
    "sample_norm",
    "head",
    "kl_loss",
    "ce_loss",
    "total_loss",
    "offset_predictor",
    "fusion_forward",
    "model_forward",
];

/// Runs every operator check at [`INSTANCES`] random instances drawn from
/// `seed`; the end-to-end check uses `cfg` (kept small: it perturbs every
/// parameter).
pub fn op_suite(cfg: &FusionNetConfig, seed: u64, tol: f64) -> Result<Vec<OpCheck>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (k, &op) in SUITE_OPS.iter().enumerate() {
        for i in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((k * INSTANCES + i) as u64);
            let report = match op {
                "conv2d" => check_conv(&mut rng, i, tol),
                "bilinear_sample" => check_bilinear(&mut rng, i, tol),
                "deform_conv2d" => check_deform(&mut rng, i, tol),
                "softmax_t" => check_softmax(&mut rng, i, tol),
                "adaptive_avg_pool" => check_pool(&mut rng, i, tol),
                "sample_norm" => check_norm(&mut rng, i, tol),
                "head" => check_head(&mut rng, i, tol),
                "kl_loss" => check_kl(&mut rng, i, tol),
                "ce_loss" => check_ce(&mut rng, i, tol),
                "total_loss" => check_total(&mut rng, i, tol),
                "offset_predictor" => check_predictor(&mut rng, i, tol),
                "fusion_forward" => check_fusion(&mut rng, i, tol),
                _ => check_model(cfg, &mut rng, i, tol),
            }?;
            out.push(OpCheck { op, instance: i, report });
        }
    }
    Ok(out)
}
