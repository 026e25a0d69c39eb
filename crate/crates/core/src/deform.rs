//! Deformable dynamic fusion.
//!
//! The two backbone maps are concatenated along channels. A 3×3 predictor
//! convolution on the fused map emits 18 offset channels (a (Δy, Δx) pair
//! per kernel tap) and 9 modulation channels squashed through a logistic.
//! A modulated deformable 3×3 convolution then mixes the fused map down to
//! the fusion width, and adaptive average pooling fixes the spatial size.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const KERNEL: usize = 3;
pub const TAPS: usize = KERNEL * KERNEL;
pub const OFFSET_CHANNELS: usize = 2 * TAPS;
pub const MODULATION_CHANNELS: usize = TAPS;
pub const PREDICTOR_CHANNELS: usize = OFFSET_CHANNELS + MODULATION_CHANNELS;

#[derive(Clone, Debug, PartialEq)]
pub struct DeformFusionParams<T> {
    pub main_weight: Tensor<T>,
    pub main_bias: Tensor<T>,
    pub predictor_weight: Tensor<T>,
    pub predictor_bias: Tensor<T>,
}

/// Tape handles for a [`DeformFusionParams`].
#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    pub main_weight: Var,
    pub main_bias: Var,
    pub predictor_weight: Var,
    pub predictor_bias: Var,
}

/// Uniform fan-in initializer shared by every conv and affine layer.
pub(crate) fn fan_in_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

impl<T: Real> DeformFusionParams<T> {
    /// Main convolution gets a fan-in initialization; the whole predictor
    /// starts at zero, so sampling begins undeformed with modulation 0.5.
    pub fn init<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self {
            main_weight: fan_in_uniform(&[out_ch, in_ch, KERNEL, KERNEL], in_ch * TAPS, rng),
            main_bias: Tensor::zeros(&[out_ch]),
            predictor_weight: Tensor::zeros(&[PREDICTOR_CHANNELS, in_ch, KERNEL, KERNEL]),
            predictor_bias: Tensor::zeros(&[PREDICTOR_CHANNELS]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.main_weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.main_weight.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> FusionVars {
        FusionVars {
            main_weight: tape.param(&self.main_weight),
            main_bias: tape.param(&self.main_bias),
            predictor_weight: tape.param(&self.predictor_weight),
            predictor_bias: tape.param(&self.predictor_bias),
        }
    }
}

/// How modulation weights are obtained in [`fusion_forward`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Modulation {
    /// Predicted from the fused map through a logistic.
    Learned,
    /// Every tap weighted by the given constant; `Fixed(1.0)` reduces the
    /// layer to a plain convolution when offsets are zero.
    Fixed(f64),
}

/// Intermediate handles of one fusion pass.
#[derive(Clone, Copy, Debug)]
pub struct FusionTrace {
    pub fused: Var,
    pub offsets: Var,
    pub modulations: Var,
    pub deformed: Var,
    pub pooled: Var,
}

/// Concatenates stream A then stream B along channels.
pub fn fuse_streams<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::shape(
            "fuse_streams",
            format!("streams must agree on batch and spatial extents: {sa:?} vs {sb:?}"),
        ));
    }
    tape.concat_channels(a, b)
}

/// Predicts per-position offsets (N×18×H×W, raw pixels) and modulations
/// (N×9×H×W, in (0, 1)) from the fused map.
pub fn predict_offsets_modulations<T: Real>(tape: &mut Tape<T>, fused: Var, vars: &FusionVars) -> Result<(Var, Var)> {
    let in_ch = tape.shape(vars.predictor_weight)[1];
    let fs = tape.shape(fused);
    if fs.len() != 4 || fs[1] != in_ch {
        return Err(Error::shape(
            "predict_offsets_modulations",
            format!("fused map {fs:?} does not have {in_ch} channels"),
        ));
    }
    let raw = tape.conv2d(fused, vars.predictor_weight, Some(vars.predictor_bias), 1, 1)?;
    let offsets = tape.narrow_channels(raw, 0, OFFSET_CHANNELS)?;
    let logits = tape.narrow_channels(raw, OFFSET_CHANNELS, MODULATION_CHANNELS)?;
    Ok((offsets, tape.sigmoid(logits)))
}

/// fuse → predict offsets/modulations → deformable conv → adaptive pool.
pub fn fusion_forward<T: Real>(
    tape: &mut Tape<T>,
    a: Var,
    b: Var,
    vars: &FusionVars,
    pooled: usize,
    modulation: Modulation,
) -> Result<FusionTrace> {
    let fused = fuse_streams(tape, a, b)?;
    let (offsets, learned) = predict_offsets_modulations(tape, fused, vars)?;
    let modulations = match modulation {
        Modulation::Learned => learned,
        Modulation::Fixed(v) => {
            let shape = tape.shape(learned).to_vec();
            tape.constant(&Tensor::full(&shape, T::of(v)))
        }
    };
    let deformed = tape.deform_conv2d(fused, vars.main_weight, Some(vars.main_bias), offsets, modulations, 1, 1)?;
    let pooled = tape.adaptive_avg_pool(deformed, pooled, pooled)?;
    Ok(FusionTrace { fused, offsets, modulations, deformed, pooled })
}
