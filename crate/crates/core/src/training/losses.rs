//! Training objectives. Graph-level builders return scalar nodes so callers
//! can backpropagate; the `*_value` helpers evaluate them on a fresh graph.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::kinematics::{end_effector_positions, fk_differentiable};
use crate::motion::MotionClip;
use crate::net::{Bound, LatentCode, Module, RetargetModel, Side};

/// Loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub align: f64,
    pub consis: f64,
    pub ee: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { align: 1.0, consis: 0.1, ee: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PretrainTerms {
    pub total: Var,
    pub recon: Var,
    pub align: Var,
    pub consis: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PretrainValues {
    pub total: f64,
    pub recon: f64,
    pub align: f64,
    pub consis: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FinetuneTerms {
    pub total: Var,
    pub recon_b: Var,
    pub ee: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FinetuneValues {
    pub total: f64,
    pub recon_b: f64,
    pub ee: f64,
}

/// Mean squared difference of two latent codes.
pub fn loss_align(g: &mut Graph, za: Var, zb: Var) -> Result<Var> {
    g.mse(za, zb)
}

pub fn loss_align_value(za: &LatentCode, zb: &LatentCode) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(za.0.clone()), g.constant(zb.0.clone()));
    let l = loss_align(&mut g, a, b)?;
    Ok(g.value(l).item())
}

/// Rotation MSE plus root translation MSE between raw decoder output and a
/// network input tensor.
fn recon_term(g: &mut Graph, model: &RetargetModel, side: Side, out: Var, target: Var) -> Result<Var> {
    let (ro, to) = model.split_output(g, side, out)?;
    let (rt, tt) = model.split_output(g, side, target)?;
    let a = g.mse(ro, rt)?;
    let b = g.mse(to, tt)?;
    g.add(a, b)
}

/// Full pretraining objective on one pair of input tensors. The model must be
/// bound with all four modules.
pub fn pretrain_terms(
    g: &mut Graph,
    model: &RetargetModel,
    bound: &Bound,
    xa: Var,
    xb: Var,
    w: &LossWeights,
) -> Result<PretrainTerms> {
    let za = model.encode_var(g, bound, Side::A, xa)?;
    let zb = model.encode_var(g, bound, Side::B, xb)?;
    let mut recon = Vec::with_capacity(4);
    let mut consis = Vec::with_capacity(2);
    for (side, x, z_own, z_other) in [(Side::A, xa, za, zb), (Side::B, xb, zb, za)] {
        let own = model.decode_var(g, bound, side, z_own)?;
        let cross = model.decode_var(g, bound, side, z_other)?;
        recon.push(recon_term(g, model, side, own, x)?);
        recon.push(recon_term(g, model, side, cross, x)?);
        let again = model.decoded_to_input(g, side, own)?;
        let z_again = model.encode_var(g, bound, side, again)?;
        consis.push(g.mse(z_again, z_own)?);
    }
    let recon = sum_all(g, &recon)?;
    let consis = sum_all(g, &consis)?;
    let align = loss_align(g, za, zb)?;
    let wa = g.scale(align, w.align);
    let wc = g.scale(consis, w.consis);
    let total = g.add(recon, wa)?;
    let total = g.add(total, wc)?;
    Ok(PretrainTerms { total, recon, align, consis })
}

fn sum_all(g: &mut Graph, v: &[Var]) -> Result<Var> {
    let mut acc = v[0];
    for &x in &v[1..] {
        acc = g.add(acc, x)?;
    }
    Ok(acc)
}

pub fn pretrain_values(g: &Graph, t: &PretrainTerms) -> PretrainValues {
    PretrainValues {
        total: g.value(t.total).item(),
        recon: g.value(t.recon).item(),
        align: g.value(t.align).item(),
        consis: g.value(t.consis).item(),
    }
}

/// Evaluates the pretraining objective on one pair without gradients.
pub fn loss_pretrain(model: &RetargetModel, pair: &(MotionClip, MotionClip), w: &LossWeights) -> Result<PretrainValues> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, &Module::ALL, &[]);
    let xa = g.constant(model.input_tensor(Side::A, &pair.0)?);
    let xb = g.constant(model.input_tensor(Side::B, &pair.1)?);
    let t = pretrain_terms(&mut g, model, &bound, xa, xb, w)?;
    Ok(pretrain_values(&g, &t))
}

/// Reconstruction part of the pretraining objective (both sides, self and cross).
pub fn loss_recon(model: &RetargetModel, pair: &(MotionClip, MotionClip)) -> Result<f64> {
    Ok(loss_pretrain(model, pair, &LossWeights { align: 0.0, consis: 0.0, ee: 0.0 })?.recon)
}

/// Latent consistency of both autoencoders.
pub fn loss_consistency(model: &RetargetModel, pair: &(MotionClip, MotionClip)) -> Result<f64> {
    Ok(loss_pretrain(model, pair, &LossWeights::default())?.consis)
}

/// Fine-tuning objective for one (human, feasible) pair. Only decoder B needs
/// to be trainable; the encoders may be bound as constants.
pub fn finetune_terms(
    g: &mut Graph,
    model: &RetargetModel,
    bound: &Bound,
    human: Var,
    feasible: Var,
    feasible_ee: Var,
    w: &LossWeights,
) -> Result<FinetuneTerms> {
    let za = model.encode_var(g, bound, Side::A, human)?;
    let zb = model.encode_var(g, bound, Side::B, feasible)?;
    let own = model.decode_var(g, bound, Side::B, zb)?;
    let cross = model.decode_var(g, bound, Side::B, za)?;
    let r1 = recon_term(g, model, Side::B, own, feasible)?;
    let r2 = recon_term(g, model, Side::B, cross, feasible)?;
    let recon_b = g.add(r1, r2)?;
    let ee = ee_term(g, model, cross, feasible_ee)?;
    let we = g.scale(ee, w.ee);
    let total = g.add(recon_b, we)?;
    Ok(FinetuneTerms { total, recon_b, ee })
}

fn ee_term(g: &mut Graph, model: &RetargetModel, out: Var, target: Var) -> Result<Var> {
    let s = model.skeleton(Side::B);
    if s.end_effectors().is_empty() {
        return Err(Error::EmptyEndEffectorSet);
    }
    let (rot, root) = model.split_output(g, Side::B, out)?;
    let pos = fk_differentiable(g, s, rot, root)?;
    let ee = g.index_select(pos, 1, s.end_effectors())?;
    g.mse(ee, target)
}

/// `[T, E, 3]` end-effector positions of a skeleton-B clip.
pub fn ee_target(model: &RetargetModel, clip: &MotionClip) -> Result<Tensor> {
    Ok(end_effector_positions(model.skeleton(Side::B), clip)?.to_tensor())
}

pub fn finetune_values(g: &Graph, t: &FinetuneTerms) -> FinetuneValues {
    FinetuneValues { total: g.value(t.total).item(), recon_b: g.value(t.recon_b).item(), ee: g.value(t.ee).item() }
}

pub fn loss_finetune(model: &RetargetModel, human: &MotionClip, feasible: &MotionClip, w: &LossWeights) -> Result<FinetuneValues> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, &[Module::EncoderA, Module::EncoderB, Module::DecoderB], &[]);
    let h = g.constant(model.input_tensor(Side::A, human)?);
    let f = g.constant(model.input_tensor(Side::B, feasible)?);
    let e = g.constant(ee_target(model, feasible)?);
    let t = finetune_terms(&mut g, model, &bound, h, f, e, w)?;
    Ok(finetune_values(&g, &t))
}

/// End-effector MSE between the retargeted `human` clip and `feasible`.
pub fn loss_ee(model: &RetargetModel, human: &MotionClip, feasible: &MotionClip) -> Result<f64> {
    Ok(loss_finetune(model, human, feasible, &LossWeights::default())?.ee)
}
