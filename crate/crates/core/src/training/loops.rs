use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::PairedDataset;
use super::losses::{
    ee_target, finetune_terms, finetune_values, pretrain_terms, pretrain_values, FinetuneValues, LossWeights,
    PretrainValues,
};
use super::optim::{Optimizer, OptimizerKind};
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::motion::MotionClip;
use crate::net::{Module, RetargetModel, Side};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Threads evaluating a mini-batch; 0 uses the global default.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 3000,
            batch_size: 1,
            weights: LossWeights::default(),
            seed: 0,
            optimizer: OptimizerKind::Adam,
            workers: 0,
        }
    }
}

impl TrainConfig {
    /// `steps = 0` is accepted here and means "do nothing".
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [("lambda_align", w.align), ("lambda_consis", w.consis), ("lambda_ee", w.ee)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub step: u64,
    pub loss_total: f64,
    pub loss_recon: f64,
    pub loss_align: f64,
    pub loss_consis: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub step: u64,
    pub loss_recon_b: f64,
    pub loss_ee: f64,
}

/// Dataset indices for global step `step`: consecutive slices of a
/// per-epoch seeded permutation.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut perm_epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    (0..batch as u64)
        .map(|i| {
            let k = step * batch as u64 + i;
            let epoch = k / n as u64;
            if epoch != perm_epoch {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                perm = (0..n).collect();
                perm.shuffle(&mut rng);
                perm_epoch = epoch;
            }
            perm[(k % n as u64) as usize]
        })
        .collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Sums per-sample gradients in sample order so the result does not depend on
/// scheduling.
fn merge(indices: &[usize], model: &RetargetModel, parts: Vec<Vec<Option<Tensor>>>) -> Vec<Tensor> {
    let mut total: Vec<Tensor> = indices.iter().map(|&i| Tensor::zeros(model.params().get(i).shape())).collect();
    for part in parts {
        for (acc, g) in total.iter_mut().zip(part) {
            if let Some(g) = g {
                acc.add_assign(&g);
            }
        }
    }
    total
}

/// Gradient of the batch-mean pretraining loss for every parameter tensor,
/// plus the batch-mean loss values.
pub fn pretrain_gradients(
    model: &RetargetModel,
    batch: &[&(MotionClip, MotionClip)],
    w: &LossWeights,
) -> Result<(Vec<Tensor>, PretrainValues)> {
    let scale = 1.0 / batch.len() as f64;
    let all: Vec<usize> = (0..model.params().len()).collect();
    let results: Vec<Result<(Vec<Option<Tensor>>, PretrainValues)>> = batch
        .par_iter()
        .map(|pair| {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, &Module::ALL, &Module::ALL);
            let xa = g.constant(model.input_tensor(Side::A, &pair.0)?);
            let xb = g.constant(model.input_tensor(Side::B, &pair.1)?);
            let t = pretrain_terms(&mut g, model, &bound, xa, xb, w)?;
            let values = pretrain_values(&g, &t);
            let loss = g.scale(t.total, scale);
            g.backward(loss)?;
            let grads = (0..model.params().len()).map(|i| bound.var(i).and_then(|v| g.take_grad(v))).collect();
            Ok((grads, values))
        })
        .collect();
    let mut parts = Vec::with_capacity(batch.len());
    let mut mean = PretrainValues::default();
    for r in results {
        let (grads, v) = r?;
        parts.push(grads);
        mean.total += v.total * scale;
        mean.recon += v.recon * scale;
        mean.align += v.align * scale;
        mean.consis += v.consis * scale;
    }
    Ok((merge(&all, model, parts), mean))
}

fn check_dataset(model: &RetargetModel, dataset: &PairedDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (side, name) in [(Side::A, dataset.skeleton_a()), (Side::B, dataset.skeleton_b())] {
        let expected = model.skeleton(side).name();
        if name != expected {
            return Err(Error::SkeletonMismatch { expected: expected.into(), found: name.into() });
        }
    }
    Ok(())
}

pub fn pretrain_optimizer(model: &RetargetModel, config: &TrainConfig) -> Optimizer {
    Optimizer::new(config.optimizer, config.learning_rate, model.params(), (0..model.params().len()).collect())
}

/// Runs `config.steps` pretraining steps from a fresh optimizer.
pub fn pretrain(model: &mut RetargetModel, dataset: &PairedDataset, config: &TrainConfig) -> Result<Vec<PretrainRecord>> {
    let mut opt = pretrain_optimizer(model, config);
    pretrain_resume(model, dataset, config, &mut opt, |_| Ok(()))
}

/// Continues pretraining from the model's step counter. Batches depend only
/// on the seed and the global step, so a resumed run with restored optimizer
/// state matches an uninterrupted one.
pub fn pretrain_resume(
    model: &mut RetargetModel,
    dataset: &PairedDataset,
    config: &TrainConfig,
    opt: &mut Optimizer,
    mut on_step: impl FnMut(&PretrainRecord) -> Result<()>,
) -> Result<Vec<PretrainRecord>> {
    config.validate()?;
    check_dataset(model, dataset)?;
    let pool = pool(config.workers)?;
    let start = model.trained_steps();
    let mut history = Vec::with_capacity(config.steps);
    for k in 0..config.steps as u64 {
        let step = start + k;
        let idx = batch_indices(dataset.len(), config.batch_size, config.seed, step);
        let batch: Vec<&(MotionClip, MotionClip)> = idx.iter().map(|&i| &dataset.pairs()[i]).collect();
        let (grads, v) = pool.install(|| pretrain_gradients(model, &batch, &config.weights))?;
        opt.step(model.params_mut(), &grads)?;
        let rec = PretrainRecord { step, loss_total: v.total, loss_recon: v.recon, loss_align: v.align, loss_consis: v.consis };
        on_step(&rec)?;
        history.push(rec);
        model.set_progress("pretrained", step + 1);
    }
    Ok(history)
}

struct FinetuneSample {
    human: Tensor,
    feasible: Tensor,
    ee: Tensor,
}

fn finetune_samples(model: &RetargetModel, human: &[MotionClip], feasible: &[MotionClip]) -> Result<Vec<FinetuneSample>> {
    if human.len() != feasible.len() {
        return Err(Error::LengthMismatch(format!("{} human clips, {} feasible clips", human.len(), feasible.len())));
    }
    if human.is_empty() {
        return Err(Error::EmptyDataset);
    }
    human
        .iter()
        .zip(feasible)
        .map(|(h, f)| {
            Ok(FinetuneSample {
                human: model.input_tensor(Side::A, h)?,
                feasible: model.input_tensor(Side::B, f)?,
                ee: ee_target(model, f)?,
            })
        })
        .collect()
}

fn finetune_gradients(
    model: &RetargetModel,
    batch: &[&FinetuneSample],
    w: &LossWeights,
) -> Result<(Vec<Tensor>, FinetuneValues)> {
    let scale = 1.0 / batch.len() as f64;
    let train = model.module_params(Module::DecoderB);
    let results: Vec<Result<(Vec<Option<Tensor>>, FinetuneValues)>> = batch
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, &[Module::EncoderA, Module::EncoderB, Module::DecoderB], &[Module::DecoderB]);
            let h = g.constant(s.human.clone());
            let f = g.constant(s.feasible.clone());
            let e = g.constant(s.ee.clone());
            let t = finetune_terms(&mut g, model, &bound, h, f, e, w)?;
            let values = finetune_values(&g, &t);
            let loss = g.scale(t.total, scale);
            g.backward(loss)?;
            let grads = train.iter().map(|&i| bound.var(i).and_then(|v| g.take_grad(v))).collect();
            Ok((grads, values))
        })
        .collect();
    let mut parts = Vec::with_capacity(batch.len());
    let mut mean = FinetuneValues::default();
    for r in results {
        let (grads, v) = r?;
        parts.push(grads);
        mean.total += v.total * scale;
        mean.recon_b += v.recon_b * scale;
        mean.ee += v.ee * scale;
    }
    Ok((merge(&train, model, parts), mean))
}

/// Trains decoder B on `(human, feasible)` pairs; every other tensor is left
/// bit-unchanged.
pub fn finetune(
    model: &mut RetargetModel,
    human: &[MotionClip],
    feasible: &[MotionClip],
    config: &TrainConfig,
) -> Result<Vec<FinetuneRecord>> {
    finetune_with(model, human, feasible, config, |_| Ok(()))
}

pub fn finetune_with(
    model: &mut RetargetModel,
    human: &[MotionClip],
    feasible: &[MotionClip],
    config: &TrainConfig,
    mut on_step: impl FnMut(&FinetuneRecord) -> Result<()>,
) -> Result<Vec<FinetuneRecord>> {
    config.validate()?;
    let samples = finetune_samples(model, human, feasible)?;
    let pool = pool(config.workers)?;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, model.params(), model.module_params(Module::DecoderB));
    let base = model.trained_steps();
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps as u64 {
        let idx = batch_indices(samples.len(), config.batch_size, config.seed, step);
        let batch: Vec<&FinetuneSample> = idx.iter().map(|&i| &samples[i]).collect();
        let (grads, v) = pool.install(|| finetune_gradients(model, &batch, &config.weights))?;
        opt.step(model.params_mut(), &grads)?;
        let rec = FinetuneRecord { step, loss_recon_b: v.recon_b, loss_ee: v.ee };
        on_step(&rec)?;
        history.push(rec);
    }
    if config.steps > 0 {
        model.set_progress("finetuned", base);
    }
    Ok(history)
}
