//! Loss weighting, learning-rate schedules, Adam and the teacher-forced
//! epoch loop.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chem::{tokenize, ChemError, TokenSeq};
use crate::cvae::ConditionSet;
use crate::model::{Batch, Model, ModelError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError};
use crate::transformer::Graph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("row {row}: {source}")]
    Tokenize {
        row: usize,
        #[source]
        source: ChemError,
    },
    #[error("non-finite loss at step {0}")]
    Diverged(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheduler {
    /// `factor · d_model^-0.5 · min(s^-0.5, s · warmup^-1.5)`.
    WarmUp { warmup_steps: u64, factor: f64 },
    /// Cosine annealing from `eta_max` to `eta_min`, restarting every
    /// `cycle_steps` (0 = once per epoch).
    Sgdr {
        eta_min: f64,
        eta_max: f64,
        cycle_steps: u64,
    },
    /// The optimizer's base rate at every step.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            base_lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub kla_start: f64,
    pub kla_step: f64,
    pub kla_end: f64,
    pub scheduler: Scheduler,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            kla_start: 0.0,
            kla_step: 0.02,
            kla_end: 0.5,
            scheduler: Scheduler::WarmUp {
                warmup_steps: 100_000,
                factor: 3.0,
            },
            adam: AdamConfig::default(),
            batch_size: 32,
            seed: 0,
            max_grad_norm: None,
        }
    }
}

/// KL weight for a 1-based epoch: `min(start + epoch · step, end)`.
pub fn kl_anneal_weight(epoch: u32, cfg: &TrainConfig) -> f64 {
    (cfg.kla_start + epoch as f64 * cfg.kla_step).min(cfg.kla_end)
}

/// Warm-up schedule with the default multiplier of 3.
pub fn warmup_lr(step: u64, d_model: usize, warmup_steps: u64) -> f64 {
    warmup_lr_scaled(step, d_model, warmup_steps, 3.0)
}

pub fn warmup_lr_scaled(step: u64, d_model: usize, warmup_steps: u64, factor: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup_steps.max(1) as f64;
    factor * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

/// Cosine annealing at position `t_cur` of a cycle of length `t_i`:
/// `eta_max` at 0, `eta_min` at `t_i`.
pub fn cosine_anneal(t_cur: f64, t_i: f64, eta_min: f64, eta_max: f64) -> f64 {
    eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (PI * t_cur / t_i).cos())
}

/// Cosine annealing with warm restarts; `step` counts from 0 and the
/// schedule restarts at every multiple of `cycle_steps`.
pub fn sgdr_lr(step: u64, eta_min: f64, eta_max: f64, cycle_steps: u64) -> f64 {
    let cycle = cycle_steps.max(1);
    cosine_anneal((step % cycle) as f64, cycle as f64, eta_min, eta_max)
}

/// Learning rate for the 1-based optimizer step `step`.
pub fn learning_rate(scheduler: &Scheduler, adam: &AdamConfig, step: u64, d_model: usize, steps_per_epoch: u64) -> f64 {
    match *scheduler {
        Scheduler::WarmUp { warmup_steps, factor } => warmup_lr_scaled(step, d_model, warmup_steps, factor),
        Scheduler::Sgdr {
            eta_min,
            eta_max,
            cycle_steps,
        } => {
            let cycle = if cycle_steps == 0 { steps_per_epoch } else { cycle_steps };
            sgdr_lr(step.saturating_sub(1), eta_min, eta_max, cycle)
        }
        Scheduler::Constant => adam.base_lr,
    }
}

/// Adam moments for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: &AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected update. Parameters without a gradient are treated
    /// as having a zero gradient.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<ParamId, Tensor>,
        lr: f64,
    ) -> Result<(), TensorError> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let param = store.get_mut(id);
            match grads.get(&id) {
                Some(g) => {
                    if g.shape() != param.shape() {
                        return Err(TensorError::ShapeMismatch {
                            op: "adam",
                            left: param.shape().to_vec(),
                            right: g.shape().to_vec(),
                        });
                    }
                    for (((p, mi), vi), gi) in param
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(g.data())
                    {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                        *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                    }
                }
                None => {
                    for ((p, mi), vi) in param.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()) {
                        *mi *= self.beta1;
                        *vi *= self.beta2;
                        *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// A tokenized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub seq: TokenSeq,
    pub conditions: ConditionSet,
}

/// Tokenizes `(smiles, properties)` rows, reporting the first failure with
/// its row index.
pub fn prepare(rows: &[(String, ConditionSet)]) -> Result<Vec<TrainRow>, TrainError> {
    rows.iter()
        .enumerate()
        .map(|(row, (smiles, c))| {
            tokenize(smiles)
                .map(|seq| TrainRow { seq, conditions: *c })
                .map_err(|source| TrainError::Tokenize { row, source })
        })
        .collect()
}

/// Mutable training progress carried between epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub optimizer: Adam,
    pub step: u64,
    pub epoch: u32,
}

impl TrainState {
    pub fn new(model: &Model, cfg: &TrainConfig) -> Self {
        TrainState {
            optimizer: Adam::new(&model.store, &cfg.adam),
            step: 0,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    /// Mean total loss over batches.
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    /// Teacher-forced accuracy of the training-mode forward passes.
    pub accuracy: f64,
    /// Rate used at the last step of the epoch.
    pub lr: f64,
    pub k_w: f64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn batches(rows: &[TrainRow], order: &[usize], size: usize) -> Result<Vec<Batch>, ModelError> {
    order
        .chunks(size.max(1))
        .map(|chunk| {
            let items: Vec<(&TokenSeq, ConditionSet)> =
                chunk.iter().map(|&i| (&rows[i].seq, rows[i].conditions)).collect();
            Batch::new(&items)
        })
        .collect()
}

fn grad_norm(grads: &BTreeMap<ParamId, Tensor>) -> f64 {
    grads.values().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
}

/// One pass over `rows` in a seeded shuffled order, one optimizer step per
/// batch. `state.epoch` advances to `epoch`.
pub fn train_epoch(
    rows: &[TrainRow],
    model: &mut Model,
    state: &mut TrainState,
    cfg: &TrainConfig,
    epoch: u32,
) -> Result<EpochStats, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut stream_rng(cfg.seed, 2 * epoch as u64));
    let batches = batches(rows, &order, cfg.batch_size)?;
    let steps_per_epoch = batches.len() as u64;
    let k_w = kl_anneal_weight(epoch, cfg);
    let (mut loss_sum, mut recon_sum, mut kl_sum) = (0.0, 0.0, 0.0);
    let (mut hits, mut total) = (0usize, 0usize);
    let mut lr = 0.0;
    for batch in &batches {
        state.step += 1;
        let grads = {
            let tape = Tape::new();
            let rng = stream_rng(cfg.seed, 2 * state.step + 1);
            let g = Graph::train(&tape, &model.store, model.config.dropout, rng);
            let f = model.forward(&g, batch)?;
            let loss = model.loss(&f, batch, k_w)?;
            let value = loss.total.value().item()?;
            if !value.is_finite() {
                return Err(TrainError::Diverged(state.step));
            }
            loss_sum += value;
            recon_sum += loss.recon.value().item()?;
            kl_sum += loss.kl.value().item()?;
            let (h, t) = Model::token_accuracy(&f.logits.value(), batch);
            hits += h;
            total += t;
            tape.backward(loss.total)?.params()
        };
        let mut grads = grads;
        if let Some(max_norm) = cfg.max_grad_norm {
            let norm = grad_norm(&grads);
            if norm > max_norm {
                let s = max_norm / norm;
                for g in grads.values_mut() {
                    g.data_mut().iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        lr = learning_rate(
            &cfg.scheduler,
            &cfg.adam,
            state.step,
            model.config.d_model,
            steps_per_epoch,
        );
        state.optimizer.step(&mut model.store, &grads, lr)?;
    }
    state.epoch = epoch;
    let n = batches.len() as f64;
    Ok(EpochStats {
        epoch,
        loss: loss_sum / n,
        recon: recon_sum / n,
        kl: kl_sum / n,
        accuracy: hits as f64 / total.max(1) as f64,
        lr,
        k_w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub accuracy: f64,
    pub recon: f64,
}

/// Evaluation-mode (no dropout, `z = mu`) teacher-forced accuracy and mean
/// reconstruction loss.
pub fn evaluate(rows: &[TrainRow], model: &Model, batch_size: usize) -> Result<EvalStats, TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let order: Vec<usize> = (0..rows.len()).collect();
    let (mut hits, mut total) = (0usize, 0usize);
    let mut recon = 0.0;
    for batch in batches(rows, &order, batch_size)? {
        let tape = Tape::new();
        let g = Graph::eval(&tape, &model.store);
        let f = model.forward(&g, &batch)?;
        let weights = batch.target_weights();
        let r = f.logits.cross_entropy(&batch.targets, &weights)?.value().item()?;
        recon += r * weights.iter().sum::<f64>();
        let (h, t) = Model::token_accuracy(&f.logits.value(), &batch);
        hits += h;
        total += t;
    }
    Ok(EvalStats {
        accuracy: hits as f64 / total.max(1) as f64,
        recon: recon / total.max(1) as f64,
    })
}

/// CSV line for the epoch log: `epoch,loss,kl,accuracy,lr,k_w`.
pub fn epoch_log_line(s: &EpochStats) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6e},{:.4}",
        s.epoch, s.loss, s.kl, s.accuracy, s.lr, s.k_w
    )
}

pub const EPOCH_LOG_HEADER: &str = "epoch,loss,kl,token_accuracy,lr,k_w";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn kl_weight_schedule() {
        let cfg = TrainConfig::default();
        assert!((kl_anneal_weight(1, &cfg) - 0.02).abs() < 1e-15);
        assert!((kl_anneal_weight(25, &cfg) - 0.5).abs() < 1e-15);
        assert_eq!(kl_anneal_weight(40, &cfg), 0.5);
    }

    #[test]
    fn warmup_peaks_at_warmup_steps() {
        let w = 100;
        let peak = warmup_lr(w, 512, w);
        assert!((peak - 3.0 / 512f64.sqrt() * (w as f64).powf(-0.5)).abs() < 1e-15);
        for s in 1..w {
            assert!(warmup_lr(s, 512, w) < warmup_lr(s + 1, 512, w));
        }
        for s in w..3 * w {
            assert!(warmup_lr(s + 1, 512, w) < warmup_lr(s, 512, w));
        }
    }

    #[test]
    fn sgdr_endpoints() {
        assert_eq!(sgdr_lr(0, 0.0, 1e-4, 100), 1e-4);
        assert!((sgdr_lr(50, 0.0, 1e-4, 100) - 5e-5).abs() < 1e-18);
        assert!(sgdr_lr(99, 0.0, 1e-4, 100) < 1e-7);
        assert_eq!(sgdr_lr(100, 0.0, 1e-4, 100), 1e-4);
    }

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(&[w]));
        (store, id)
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut store, id) = scalar_store(1.0);
        let mut adam = Adam::new(&store, &AdamConfig::default());
        let grads = BTreeMap::from([(id, Tensor::vector(&[2.5]))]);
        adam.step(&mut store, &grads, 0.01).unwrap();
        assert!((store.get(id).data()[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_without_gradient_decays_moments() {
        let (mut store, id) = scalar_store(1.0);
        let mut adam = Adam::new(&store, &AdamConfig::default());
        adam.step(&mut store, &BTreeMap::new(), 0.1).unwrap();
        assert_eq!(store.get(id).data()[0], 1.0);
        adam.step(&mut store, &BTreeMap::from([(id, Tensor::vector(&[1.0]))]), 0.1)
            .unwrap();
        let m = adam.m[0].data()[0];
        adam.step(&mut store, &BTreeMap::new(), 0.0).unwrap();
        assert!((adam.m[0].data()[0] - 0.9 * m).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = Adam::new(&store, &AdamConfig::default());
        for _ in 0..200 {
            let w = store.get(id).data()[0];
            let grads = BTreeMap::from([(id, Tensor::vector(&[2.0 * (w - 3.0)]))]);
            adam.step(&mut store, &grads, 0.1).unwrap();
        }
        let w = store.get(id).data()[0];
        assert!((w - 3.0).abs() < 0.05, "{w}");
    }

    fn tiny_model() -> Model {
        let mut cfg = ModelConfig::toy();
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.latent_dim = 4;
        Model::new(cfg, 3).unwrap()
    }

    fn rows() -> Vec<TrainRow> {
        let raw: Vec<(String, ConditionSet)> = ["CCO", "c1ccccc1", "CC(=O)N", "C1CCCCC1O"]
            .iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), ConditionSet([i as f64, 0.5, -1.0])))
            .collect();
        prepare(&raw).unwrap()
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut model = tiny_model();
        let cfg = TrainConfig::default();
        let mut state = TrainState::new(&model, &cfg);
        assert_eq!(
            train_epoch(&[], &mut model, &mut state, &cfg, 1),
            Err(TrainError::EmptyDataset)
        );
    }

    #[test]
    fn tokenization_errors_carry_the_row() {
        let raw = vec![
            ("CC".to_string(), ConditionSet([0.0; 3])),
            ("C%".to_string(), ConditionSet([0.0; 3])),
        ];
        assert!(matches!(prepare(&raw), Err(TrainError::Tokenize { row: 1, .. })));
    }

    #[test]
    fn epochs_are_deterministic_and_learn() {
        let cfg = TrainConfig {
            scheduler: Scheduler::Constant,
            adam: AdamConfig {
                base_lr: 3e-3,
                ..AdamConfig::default()
            },
            batch_size: 2,
            ..TrainConfig::default()
        };
        let data = rows();
        let run = || {
            let mut model = tiny_model();
            let mut state = TrainState::new(&model, &cfg);
            let stats: Vec<EpochStats> = (1..=15)
                .map(|e| train_epoch(&data, &mut model, &mut state, &cfg, e).unwrap())
                .collect();
            (model, stats)
        };
        let (m1, s1) = run();
        let (m2, s2) = run();
        assert_eq!(s1, s2);
        for (a, b) in m1.store.iter().zip(m2.store.iter()) {
            assert_eq!(a.2, b.2);
        }
        assert!(s1.last().unwrap().recon < s1[0].recon);
    }
}
