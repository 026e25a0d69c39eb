use rand::Rng;

use super::{Architecture, BackboneConfig, FusionNetConfig};
use crate::deform::{fan_in_uniform, DeformFusionParams, KERNEL, PREDICTOR_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Name, shape and regularization flag of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub module: &'static str,
    pub shape: Vec<usize>,
    /// Conv and affine weights take the L2 penalty; biases do not.
    pub decay: bool,
}

fn backbone_specs(prefix: &'static str, cfg: &BackboneConfig, out: &mut Vec<ParamSpec>) {
    let mut in_ch = 3;
    for (i, stage) in cfg.stages.iter().enumerate() {
        out.push(ParamSpec {
            name: format!("{prefix}.stage{i}.weight"),
            module: prefix,
            shape: vec![stage.channels, in_ch, KERNEL, KERNEL],
            decay: true,
        });
        out.push(ParamSpec {
            name: format!("{prefix}.stage{i}.bias"),
            module: prefix,
            shape: vec![stage.channels],
            decay: false,
        });
        in_ch = stage.channels;
    }
}

/// Every parameter of the configured network, in storage order.
pub fn param_specs(cfg: &FusionNetConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    if cfg.arch != Architecture::StreamB {
        backbone_specs("backbone_a", &cfg.backbone_a, &mut out);
    }
    if cfg.arch != Architecture::StreamA {
        backbone_specs("backbone_b", &cfg.backbone_b, &mut out);
    }
    if cfg.arch == Architecture::Fusion {
        let (i, o) = (cfg.fused_channels(), cfg.fusion_out);
        out.push(ParamSpec {
            name: "fusion.main.weight".into(),
            module: "fusion_main",
            shape: vec![o, i, KERNEL, KERNEL],
            decay: true,
        });
        out.push(ParamSpec { name: "fusion.main.bias".into(), module: "fusion_main", shape: vec![o], decay: false });
        out.push(ParamSpec {
            name: "fusion.predictor.weight".into(),
            module: "fusion_predictor",
            shape: vec![PREDICTOR_CHANNELS, i, KERNEL, KERNEL],
            decay: true,
        });
        out.push(ParamSpec {
            name: "fusion.predictor.bias".into(),
            module: "fusion_predictor",
            shape: vec![PREDICTOR_CHANNELS],
            decay: false,
        });
    }
    let d = cfg.flatten_dim();
    out.push(ParamSpec { name: "head.weight".into(), module: "head", shape: vec![cfg.num_classes, d], decay: true });
    out.push(ParamSpec { name: "head.bias".into(), module: "head", shape: vec![cfg.num_classes], decay: false });
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub decay: bool,
}

/// All learnable tensors of one network, in [`param_specs`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub tensors: Vec<NamedTensor<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Fan-in uniform conv/affine weights, zero biases, zero offset and
    /// modulation predictor.
    pub fn init<R: Rng + ?Sized>(cfg: &FusionNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let tensors = param_specs(cfg)
            .into_iter()
            .map(|spec| {
                let tensor = if spec.module == "fusion_predictor" || !spec.decay {
                    Tensor::zeros(&spec.shape)
                } else {
                    let fan_in = spec.shape[1..].iter().product();
                    fan_in_uniform(&spec.shape, fan_in, rng)
                };
                NamedTensor { name: spec.name, tensor: tensor.with_grad(), decay: spec.decay }
            })
            .collect();
        Ok(Self { tensors })
    }

    /// Checks that names and shapes match what `cfg` expects.
    pub fn validate(&self, cfg: &FusionNetConfig) -> Result<()> {
        let specs = param_specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(Error::shape(
                "model params",
                format!("config expects {} tensors, found {}", specs.len(), self.tensors.len()),
            ));
        }
        for (spec, t) in specs.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.shape != t.tensor.shape() {
                return Err(Error::shape(
                    "model params",
                    format!("expected {} {:?}, found {} {:?}", spec.name, spec.shape, t.name, t.tensor.shape()),
                ));
            }
            if !t.tensor.is_finite() {
                return Err(Error::invalid("model params", format!("{} holds non-finite values", t.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name).map(|t| &mut t.tensor)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.tensor.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor { name: t.name.clone(), tensor: t.tensor.cast(), decay: t.decay })
                .collect(),
        }
    }

    /// The fusion block as a standalone parameter set.
    pub fn fusion(&self) -> Option<DeformFusionParams<T>> {
        Some(DeformFusionParams {
            main_weight: self.get("fusion.main.weight")?.clone(),
            main_bias: self.get("fusion.main.bias")?.clone(),
            predictor_weight: self.get("fusion.predictor.weight")?.clone(),
            predictor_bias: self.get("fusion.predictor.bias")?.clone(),
        })
    }
}

/// Index of `name` in spec order; panics if the layout lacks it.
pub(crate) fn index_of(specs: &[ParamSpec], name: &str) -> usize {
    specs.iter().position(|s| s.name == name).unwrap_or_else(|| panic!("layout has no {name}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_matches_specs() {
        let cfg = FusionNetConfig::preset(Preset::Desk);
        let p = ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.validate(&cfg).unwrap();
        assert!(p.get("fusion.predictor.weight").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("head.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("head.weight").unwrap().data().iter().any(|&v| v != 0.0));
        let wrong = cfg.clone().with_classes(5);
        assert!(p.validate(&wrong).is_err());
    }

    #[test]
    fn teachers_have_single_backbone() {
        let cfg = FusionNetConfig::preset(Preset::Desk).with_arch(Architecture::StreamB);
        let names: Vec<_> = param_specs(&cfg).into_iter().map(|s| s.name).collect();
        assert!(names.iter().all(|n| !n.starts_with("backbone_a") && !n.starts_with("fusion")));
        assert_eq!(names.last().unwrap(), "head.bias");
    }
}
