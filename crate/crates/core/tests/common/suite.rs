//! Finite-difference checks of every differentiable operator at three
//! random instances each, through [`super::fd_max_rel_err`].

use fusionnet::deform::{fusion_forward, FusionVars, Modulation};
use fusionnet::distill::{ce_loss, kl_loss, teacher_mixture, total_loss, DistillConfig, TeacherOutputs};
use fusionnet::model::{model_forward_bound, param_specs, ForwardOptions, FusionNetConfig, Preset};
use fusionnet::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fd_max_rel_err, uniform};

type Input = (Vec<usize>, Vec<f64>);

fn input(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Input {
    (shape.to_vec(), uniform(rng, shape.iter().product(), lo, hi))
}

/// Random linear functional of `y`, fixed per instance.
fn probe(tape: &mut Tape<f64>, y: Var, weights: &[f64]) -> Var {
    tape.weighted_sum(y, weights[..tape.value(y).len()].to_vec()).unwrap()
}

fn tensor(i: &Input) -> Tensor<f64> {
    Tensor::new(&i.0, i.1.clone()).unwrap()
}

pub const OPS: [&str; 15] = [
    "conv2d",
    "bilinear_sample",
    "deform_conv2d",
    "softmax_t",
    "adaptive_avg_pool",
    "sample_norm",
    "head",
    "dropout",
    "tanh",
    "kl_loss",
    "ce_loss",
    "total_loss",
    "offset_predictor",
    "fusion_forward",
    "model_forward",
];

/// Maximum relative error of `op` at instance `i`.
pub fn check(op: &str, i: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 * 0x9E37_79B9) ^ (op.len() as u64 * 131));
    let w = uniform(&mut rng, 4096, -1.0, 1.0);
    match op {
        "conv2d" => {
            let (s, p) = [(1, 1), (2, 0), (1, 2)][i];
            let ins = [
                input(&mut rng, &[2, 2, 5, 5], -1.0, 1.0),
                input(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
                input(&mut rng, &[3], -1.0, 1.0),
            ];
            fd_max_rel_err(&ins, |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), s, p).unwrap();
                probe(t, y, &w)
            })
        }
        "bilinear_sample" => {
            let feat = input(&mut rng, &[2, 4, 5], -1.0, 1.0);
            let coords: Vec<f64> =
                (0..10).flat_map(|_| [rng.random_range(-0.9..3.9), rng.random_range(-0.9..4.9)]).collect();
            fd_max_rel_err(&[feat, (vec![10, 2], coords)], |t, v| {
                let y = t.bilinear_sample(v[0], v[1]).unwrap();
                probe(t, y, &w)
            })
        }
        "deform_conv2d" => {
            let (s, p) = [(1, 1), (2, 1), (1, 0)][i];
            let o = (5 + 2 * p - 3) / s + 1;
            let ins = [
                input(&mut rng, &[1, 2, 5, 5], -1.0, 1.0),
                input(&mut rng, &[2, 2, 3, 3], -1.0, 1.0),
                input(&mut rng, &[2], -1.0, 1.0),
                input(&mut rng, &[1, 18, o, o], -1.5, 1.5),
                input(&mut rng, &[1, 9, o, o], 0.0, 1.0),
            ];
            fd_max_rel_err(&ins, |t, v| {
                let y = t.deform_conv2d(v[0], v[1], Some(v[2]), v[3], v[4], s, p).unwrap();
                probe(t, y, &w)
            })
        }
        "softmax_t" => {
            let temp = [1.0, 3.0, 0.5][i];
            fd_max_rel_err(&[input(&mut rng, &[3, 4], -2.0, 2.0)], |t, v| {
                let y = t.softmax(v[0], temp).unwrap();
                probe(t, y, &w)
            })
        }
        "adaptive_avg_pool" => {
            let (h, ww, oh, ow) = [(5, 7, 3, 2), (4, 4, 2, 2), (6, 5, 4, 3)][i];
            fd_max_rel_err(&[input(&mut rng, &[2, 2, h, ww], -1.0, 1.0)], |t, v| {
                let y = t.adaptive_avg_pool(v[0], oh, ow).unwrap();
                probe(t, y, &w)
            })
        }
        "sample_norm" => {
            let shape = [[2, 3, 3, 3], [1, 2, 4, 2], [3, 1, 2, 2]][i];
            fd_max_rel_err(&[input(&mut rng, &shape, -2.0, 2.0)], |t, v| {
                let y = t.sample_norm(v[0]).unwrap();
                probe(t, y, &w)
            })
        }
        "head" => {
            let (n, d, c) = [(2, 6, 4), (3, 5, 2), (1, 8, 3)][i];
            let ins = [
                input(&mut rng, &[n, d], -1.0, 1.0),
                input(&mut rng, &[c, d], -1.0, 1.0),
                input(&mut rng, &[c], -1.0, 1.0),
            ];
            fd_max_rel_err(&ins, |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
                probe(t, y, &w)
            })
        }
        "dropout" => {
            let p = [0.5, 0.2, 0.8][i];
            let mask_seed: u64 = rng.random();
            fd_max_rel_err(&[input(&mut rng, &[2, 3, 2, 2], -1.0, 1.0)], |t, v| {
                let y = t.dropout(v[0], p, true, &mut ChaCha8Rng::seed_from_u64(mask_seed)).unwrap();
                probe(t, y, &w)
            })
        }
        "tanh" => fd_max_rel_err(&[input(&mut rng, &[3, 5], -2.0, 2.0)], |t, v| {
            let y = t.tanh(v[0]);
            probe(t, y, &w)
        }),
        "kl_loss" => {
            let cfg = distill_cfg(i);
            let teachers = teacher_pair(&mut rng, 3, 4);
            let mixed = teacher_mixture(&teachers, cfg.alpha).unwrap();
            fd_max_rel_err(&[input(&mut rng, &[3, 4], -2.0, 2.0)], |t, v| kl_loss(t, v[0], &mixed, &cfg).unwrap())
        }
        "ce_loss" => {
            let alpha = [0.0, 0.5, 0.9][i];
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            fd_max_rel_err(&[input(&mut rng, &[4, 3], -2.0, 2.0)], |t, v| ce_loss(t, v[0], &labels, alpha).unwrap())
        }
        "total_loss" => {
            let cfg = distill_cfg(i);
            let teachers = teacher_pair(&mut rng, 3, 4);
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            let ins = [input(&mut rng, &[3, 4], -2.0, 2.0), input(&mut rng, &[4, 5], -1.0, 1.0)];
            fd_max_rel_err(&ins, |t, v| {
                let l2 = t.sum_squares(&[v[1]], 1e-2);
                total_loss(t, v[0], &teachers, &labels, &cfg, Some(l2)).unwrap().loss
            })
        }
        "offset_predictor" | "fusion_forward" => {
            let (ca, cb, hw, out, pooled) = [(2, 1, 4, 2, 2), (1, 2, 3, 3, 2), (2, 2, 5, 2, 3)][i];
            let cin = ca + cb;
            let ins = [
                input(&mut rng, &[1, ca, hw, hw], -1.0, 1.0),
                input(&mut rng, &[1, cb, hw, hw], -1.0, 1.0),
                input(&mut rng, &[out, cin, 3, 3], -0.5, 0.5),
                input(&mut rng, &[out], -0.5, 0.5),
                input(&mut rng, &[27, cin, 3, 3], -0.3, 0.3),
                input(&mut rng, &[27], -0.7, 0.7),
            ];
            let only_predictor = op == "offset_predictor";
            fd_max_rel_err(&ins, |t, v| {
                let vars =
                    FusionVars { main_weight: v[2], main_bias: v[3], predictor_weight: v[4], predictor_bias: v[5] };
                let trace = fusion_forward(t, v[0], v[1], &vars, pooled, Modulation::Learned).unwrap();
                if only_predictor {
                    let both = t.concat_channels(trace.offsets, trace.modulations).unwrap();
                    probe(t, both, &w)
                } else {
                    probe(t, trace.pooled, &w)
                }
            })
        }
        "model_forward" => {
            let cfg = FusionNetConfig::preset(Preset::Micro);
            let n = [2, 1, 3][i];
            let mut ins: Vec<Input> = param_specs(&cfg)
                .iter()
                .map(|s| {
                    let fan_in: usize = s.shape[1..].iter().product::<usize>().max(1);
                    let b = (1.0 / fan_in as f64).sqrt();
                    input(&mut rng, &s.shape, -b, b)
                })
                .collect();
            let decay: Vec<bool> = param_specs(&cfg).iter().map(|s| s.decay).collect();
            ins.push(input(&mut rng, &[n, 3, cfg.input_hw, cfg.input_hw], -1.0, 1.0));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.num_classes)).collect();
            let mask_seed: u64 = rng.random();
            fd_max_rel_err(&ins, |t, v| {
                let (params, img) = v.split_at(v.len() - 1);
                let mut drop = ChaCha8Rng::seed_from_u64(mask_seed);
                let pass =
                    model_forward_bound(t, &cfg, params.to_vec(), img[0], ForwardOptions::train(), &mut drop).unwrap();
                let ce = ce_loss(t, pass.logits, &labels, 0.0).unwrap();
                let decayed: Vec<Var> = params.iter().zip(&decay).filter(|(_, &d)| d).map(|(&p, _)| p).collect();
                let l2 = t.sum_squares(&decayed, cfg.l2_lambda);
                t.add(ce, l2).unwrap()
            })
        }
        _ => panic!("unknown op {op}"),
    }
}

fn distill_cfg(i: usize) -> DistillConfig {
    let (temperature, alpha, literal_t2) = [(1.0, 0.5, true), (3.0, 0.3, true), (2.0, 0.8, false)][i];
    DistillConfig { temperature, alpha, literal_t2 }
}

fn teacher_pair(rng: &mut ChaCha8Rng, n: usize, c: usize) -> TeacherOutputs<f64> {
    TeacherOutputs {
        logits_a: tensor(&input(rng, &[n, c], -3.0, 3.0)),
        logits_b: tensor(&input(rng, &[n, c], -3.0, 3.0)),
    }
}
