use rand::Rng;

use super::params::{index_of, param_specs};
use super::{Architecture, BackboneConfig, FusionNetConfig, ModelParams, Nonlinearity};
use crate::autograd::{Grads, Tape, Var};
use crate::deform::{fusion_forward, FusionTrace, FusionVars, Modulation};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub training: bool,
    pub modulation: Modulation,
}

impl ForwardOptions {
    pub fn train() -> Self {
        Self { training: true, modulation: Modulation::Learned }
    }

    pub fn eval() -> Self {
        Self { training: false, modulation: Modulation::Learned }
    }
}

/// Tape handles produced by [`model_forward`].
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// One handle per parameter tensor, in [`param_specs`] order.
    pub params: Vec<Var>,
    pub stream_a: Option<Var>,
    pub stream_b: Option<Var>,
    pub fusion: Option<FusionTrace>,
    /// Pooled map after dropout, flattened to N×D.
    pub features: Var,
    pub logits: Var,
}

impl ForwardPass {
    /// Adds the gradient of every bound parameter into `params`.
    pub fn accumulate_grads<T: Real>(
        &self,
        tape: &Tape<T>,
        grads: &Grads<T>,
        params: &mut ModelParams<T>,
    ) -> Result<()> {
        for (v, p) in self.params.iter().zip(params.tensors.iter_mut()) {
            grads.accumulate_into(tape, *v, &mut p.tensor)?;
        }
        Ok(())
    }
}

/// Runs one surrogate backbone: per stage a 3×3 conv (pad 1) followed by
/// the nonlinearity and per-sample normalization. `stages` holds the
/// (weight, bias) handles of each stage.
pub fn backbone_forward<T: Real>(
    tape: &mut Tape<T>,
    cfg: &BackboneConfig,
    stages: &[(Var, Var)],
    images: Var,
) -> Result<Var> {
    let shape = tape.shape(images).to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::shape("backbone_forward", format!("expected N×3×H×W images, got {shape:?}")));
    }
    if stages.len() != cfg.stages.len() {
        return Err(Error::shape(
            "backbone_forward",
            format!("{} stages configured, {} bound", cfg.stages.len(), stages.len()),
        ));
    }
    let stride = cfg.total_stride();
    if !shape[2].is_multiple_of(stride) || !shape[3].is_multiple_of(stride) || shape[2] < stride || shape[3] < stride {
        return Err(Error::invalid(
            "backbone_forward",
            format!("{}×{} input is not divisible by the total stride {stride}", shape[2], shape[3]),
        ));
    }
    let mut x = images;
    for (stage, &(w, b)) in cfg.stages.iter().zip(stages) {
        x = tape.conv2d(x, w, Some(b), stage.stride, 1)?;
        x = match cfg.nonlinearity {
            Nonlinearity::Relu => tape.relu(x),
            Nonlinearity::Tanh => tape.tanh(x),
        };
        x = tape.sample_norm(x)?;
    }
    Ok(x)
}

fn stage_vars(specs: &[super::ParamSpec], vars: &[Var], prefix: &str, n: usize) -> Vec<(Var, Var)> {
    (0..n)
        .map(|i| {
            let w = index_of(specs, &format!("{prefix}.stage{i}.weight"));
            let b = index_of(specs, &format!("{prefix}.stage{i}.bias"));
            (vars[w], vars[b])
        })
        .collect()
}

/// Images N×3×H×W to logits N×classes. Every parameter is bound to the
/// tape as trainable; dropout draws its mask from `rng` in training mode.
pub fn model_forward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    cfg: &FusionNetConfig,
    params: &ModelParams<T>,
    images: Var,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<ForwardPass> {
    params.validate(cfg)?;
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.param(&t.tensor)).collect();
    model_forward_bound(tape, cfg, vars, images, opts, rng)
}

/// [`model_forward`] over parameters already on the tape, in
/// [`param_specs`] order.
pub fn model_forward_bound<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    cfg: &FusionNetConfig,
    vars: Vec<Var>,
    images: Var,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<ForwardPass> {
    let specs = param_specs(cfg);
    if vars.len() != specs.len() || vars.iter().zip(&specs).any(|(&v, s)| tape.shape(v) != s.shape.as_slice()) {
        return Err(Error::shape("model_forward", "bound parameters do not match the configuration"));
    }

    let shape = tape.shape(images).to_vec();
    if shape.len() != 4 || shape[2] != cfg.input_hw || shape[3] != cfg.input_hw {
        return Err(Error::shape("model_forward", format!("expected N×3×{0}×{0} images, got {shape:?}", cfg.input_hw)));
    }

    let run = |tape: &mut Tape<T>, bb: &BackboneConfig, prefix: &str| {
        backbone_forward(tape, bb, &stage_vars(&specs, &vars, prefix, bb.stages.len()), images)
    };
    let stream_a = match cfg.arch {
        Architecture::StreamB => None,
        _ => Some(run(tape, &cfg.backbone_a, "backbone_a")?),
    };
    let stream_b = match cfg.arch {
        Architecture::StreamA => None,
        _ => Some(run(tape, &cfg.backbone_b, "backbone_b")?),
    };

    let (pooled, fusion) = match (stream_a, stream_b) {
        (Some(a), Some(b)) => {
            let fv = FusionVars {
                main_weight: vars[index_of(&specs, "fusion.main.weight")],
                main_bias: vars[index_of(&specs, "fusion.main.bias")],
                predictor_weight: vars[index_of(&specs, "fusion.predictor.weight")],
                predictor_bias: vars[index_of(&specs, "fusion.predictor.bias")],
            };
            let trace = fusion_forward(tape, a, b, &fv, cfg.pooled, opts.modulation)?;
            (trace.pooled, Some(trace))
        }
        (Some(x), None) | (None, Some(x)) => (tape.adaptive_avg_pool(x, cfg.pooled, cfg.pooled)?, None),
        (None, None) => unreachable!("every architecture has a stream"),
    };

    let dropped = tape.dropout(pooled, cfg.dropout, opts.training, rng)?;
    let features = tape.flatten(dropped)?;
    let logits =
        tape.linear(features, vars[index_of(&specs, "head.weight")], Some(vars[index_of(&specs, "head.bias")]))?;
    Ok(ForwardPass { params: vars, stream_a, stream_b, fusion, features, logits })
}

/// `λ · Σ ‖W‖²` over conv and affine weights; biases are excluded.
pub fn l2_penalty<T: Real>(
    tape: &mut Tape<T>,
    cfg: &FusionNetConfig,
    params: &ModelParams<T>,
    pass: &ForwardPass,
) -> Var {
    let decayed: Vec<Var> = params.tensors.iter().zip(&pass.params).filter(|(p, _)| p.decay).map(|(_, &v)| v).collect();
    tape.sum_squares(&decayed, T::of(cfg.l2_lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(preset: Preset) -> (FusionNetConfig, ModelParams<f32>) {
        let cfg = FusionNetConfig::preset(preset);
        let params = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (cfg, params)
    }

    #[test]
    fn desk_backbone_shapes() {
        let (cfg, params) = setup(Preset::Desk);
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::from_fn(&[2, 3, 32, 32], |i| (i % 7) as f32 / 7.0));
        let pass =
            model_forward(&mut tape, &cfg, &params, x, ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        assert_eq!(tape.shape(pass.stream_a.unwrap()), &[2, 64, 4, 4]);
        assert_eq!(tape.shape(pass.stream_b.unwrap()), &[2, 32, 4, 4]);
        assert_eq!(tape.shape(pass.features), &[2, 256]);
        assert_eq!(tape.shape(pass.logits), &[2, 3]);
    }

    #[test]
    fn eval_is_deterministic() {
        let (cfg, params) = setup(Preset::Micro);
        let img = Tensor::from_fn(&[3, 3, 8, 8], |i| ((i * 37) % 11) as f32 / 11.0);
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(&img);
            let pass =
                model_forward(&mut tape, &cfg, &params, x, ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(5))
                    .unwrap();
            tape.value(pass.logits).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let (cfg, params) = setup(Preset::Desk);
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 3, 32, 32]));
        let pass =
            model_forward(&mut tape, &cfg, &params, x, ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        assert!(tape.value(pass.features).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_image_size() {
        let (cfg, params) = setup(Preset::Desk);
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 3, 30, 30]));
        assert!(model_forward(&mut tape, &cfg, &params, x, ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn penalty_skips_biases() {
        let (cfg, mut params) = setup(Preset::Micro);
        for t in params.tensors.iter_mut() {
            t.tensor = Tensor::ones(t.tensor.shape());
        }
        let weights: usize = params.tensors.iter().filter(|t| t.decay).map(|t| t.tensor.len()).sum();
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[1, 3, 8, 8]));
        let pass =
            model_forward(&mut tape, &cfg, &params, x, ForwardOptions::eval(), &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        let l2 = l2_penalty(&mut tape, &cfg, &params, &pass);
        let want = cfg.l2_lambda as f32 * weights as f32;
        assert!((tape.scalar(l2) - want).abs() <= 1e-5 * want);
    }
}
