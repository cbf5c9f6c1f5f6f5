//! Mini-batch SGD on the stochastic-depth objective
//!
//! `L = CE(batch) + λ Σ_l q_l ‖M_l‖² / N + λ (‖stem‖² + ‖head‖²) / N`
//!
//! where `M_l` are the weight matrices of block `l`, `q_l` its survival
//! probability and `N` the mini-batch size. Biases and batch-norm affine
//! parameters are not decayed.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{permutation, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{self, PredictionSet};
use crate::numerics::ops::{softmax_cross_entropy, softmax_rows};
use crate::numerics::{grad_check, Differentiable, Gradient, Matrix};
use crate::resnet::{DropoutMasks, GateMask, Mode, NetworkSpec, ResidualNet, TrainingMeta};
use crate::rng::{self, Domain};
use crate::stochastic::{mc_predict, sample_gates, DepthSchedule, GateConvention, McConfig, Regime};

/// Which probability multiplies each block's decay term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayConvention {
    /// `q_l` (keep probability).
    #[default]
    Survival,
    /// `1 − q_l` (drop probability).
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub q_final: f64,
    pub regime: Regime,
    pub dropout_rate: f64,
    pub seed: u64,
    pub decay_convention: DecayConvention,
    /// Multiply the learning rate by 0.1 at 50% and 75% of the epochs.
    pub step_decay: bool,
    /// Scale kept blocks by `1/q_l` during training as well.
    pub scale_kept_blocks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.01,
            epochs: 100,
            batch_size: 32,
            q_final: 0.5,
            regime: Regime::Mcsd,
            dropout_rate: 0.1,
            seed: 0,
            decay_convention: DecayConvention::Survival,
            step_decay: true,
            scale_kept_blocks: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        if self.batch_size == 0 || (spec.use_batchnorm && self.batch_size < 2) {
            return Err(Error::invalid("batch_size must be >= 2 with batch norm (>= 1 otherwise)"));
        }
        if !(self.q_final > 0.0 && self.q_final <= 1.0) {
            return Err(Error::invalid("q_final must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must be in [0, 1)"));
        }
        Ok(())
    }

    /// Survival schedule used in training: linear decay for MCSD, all ones
    /// otherwise.
    pub fn schedule(&self, blocks: usize) -> Result<DepthSchedule> {
        match self.regime {
            Regime::Mcsd => DepthSchedule::linear_decay(blocks, self.q_final),
            Regime::Det | Regime::Mcdo => Ok(DepthSchedule::all_survive(blocks)),
        }
    }

    pub fn training_meta(&self) -> TrainingMeta {
        TrainingMeta {
            regime: self.regime,
            q_final: if self.regime == Regime::Mcsd { self.q_final } else { 1.0 },
            dropout_rate: if self.regime == Regime::Mcdo { self.dropout_rate } else { 0.0 },
        }
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if !self.step_decay || self.epochs == 0 {
            return self.lr;
        }
        let frac = epoch as f64 / self.epochs as f64;
        if frac >= 0.75 {
            self.lr * 0.01
        } else if frac >= 0.5 {
            self.lr * 0.1
        } else {
            self.lr
        }
    }
}

/// Decay term `λ Σ_l w_l ‖M_l‖² / n + λ (‖stem‖² + ‖head‖²) / n`.
pub fn decay_term(net: &ResidualNet, weight_decay: f64, schedule: &DepthSchedule, n: usize, convention: DecayConvention) -> f64 {
    if weight_decay == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let blocks: f64 = net
        .blocks
        .iter()
        .zip(schedule.survival())
        .map(|(b, &q)| decay_weight(q, convention) * b.weight_norm_sq())
        .sum();
    let outer = net.stem.weight.frobenius_sq() + net.head.weight.frobenius_sq();
    weight_decay * (blocks + outer) / nf
}

fn decay_weight(q: f64, convention: DecayConvention) -> f64 {
    match convention {
        DecayConvention::Survival => q,
        DecayConvention::Drop => 1.0 - q,
    }
}

/// Adds the gradient of [`decay_term`] to `grad` (weight tensors only).
fn add_decay_gradient(
    net: &ResidualNet,
    grad: &mut Gradient,
    weight_decay: f64,
    schedule: &DepthSchedule,
    n: usize,
    convention: DecayConvention,
) {
    if weight_decay == 0.0 {
        return;
    }
    let k = 2.0 * weight_decay / n as f64;
    let per_block = if net.spec().use_batchnorm { 6 } else { 4 };
    let tensors = grad.tensors_mut();
    let mut add = |t: usize, w: &Matrix, c: f64| {
        for (g, v) in tensors[t].iter_mut().zip(w.data()) {
            *g += c * v;
        }
    };
    add(0, &net.stem.weight, k);
    for (l, (b, &q)) in net.blocks.iter().zip(schedule.survival()).enumerate() {
        let base = 2 + l * per_block;
        let c = k * decay_weight(q, convention);
        add(base, &b.fc1.weight, c);
        add(base + per_block - 2, &b.fc2.weight, c);
    }
    add(2 + net.blocks.len() * per_block, &net.head.weight, k);
}

/// A mini-batch with everything needed to evaluate the objective
/// deterministically.
#[derive(Clone, Debug)]
pub struct LossInputs<'a> {
    pub x: &'a Matrix,
    pub labels: &'a [usize],
    pub mask: &'a GateMask,
    pub dropout: Option<&'a DropoutMasks>,
    pub weight_decay: f64,
    pub schedule: &'a DepthSchedule,
    pub convention: DecayConvention,
}

impl LossInputs<'_> {
    fn check(&self, net: &ResidualNet) -> Result<()> {
        if self.labels.len() != self.x.rows() {
            return Err(Error::shape("labels do not match batch"));
        }
        if let Some(bad) = self.labels.iter().find(|&&y| y >= net.spec().num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range")));
        }
        if self.schedule.len() != net.num_blocks() {
            return Err(Error::shape("schedule does not match network"));
        }
        Ok(())
    }
}

/// Train-mode objective value for one mini-batch.
pub fn mcsd_loss(net: &ResidualNet, inputs: &LossInputs<'_>) -> Result<f64> {
    inputs.check(net)?;
    let logits = net.trace(inputs.x, inputs.mask, Mode::Train, inputs.dropout)?.into_logits();
    let (data, _) = softmax_cross_entropy(&logits, inputs.labels);
    Ok(data + decay_term(net, inputs.weight_decay, inputs.schedule, inputs.x.rows(), inputs.convention))
}

/// Objective value, its gradient and the recorded trace (for batch-norm
/// statistics).
pub fn mcsd_loss_and_grad(net: &ResidualNet, inputs: &LossInputs<'_>) -> Result<(f64, Gradient, crate::resnet::ForwardTrace)> {
    inputs.check(net)?;
    let trace = net.record(inputs.x, inputs.mask, Mode::Train, inputs.dropout)?;
    let (data, dlogits) = softmax_cross_entropy(trace.logits(), inputs.labels);
    let mut grad = net.backward(&trace, &dlogits)?;
    let n = inputs.x.rows();
    add_decay_gradient(net, &mut grad, inputs.weight_decay, inputs.schedule, n, inputs.convention);
    let loss = data + decay_term(net, inputs.weight_decay, inputs.schedule, n, inputs.convention);
    Ok((loss, grad, trace))
}

struct Objective<'n, 'a> {
    net: &'n mut ResidualNet,
    inputs: LossInputs<'a>,
}

impl Differentiable for Objective<'_, '_> {
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.params_mut()
    }

    fn loss(&self) -> Result<f64> {
        mcsd_loss(self.net, &self.inputs)
    }

    fn gradient(&self) -> Result<Gradient> {
        Ok(mcsd_loss_and_grad(self.net, &self.inputs)?.1)
    }
}

/// Finite-difference check of the full objective with frozen gates and
/// dropout masks. Parameters are unchanged afterwards.
pub fn grad_check_loss(net: &mut ResidualNet, inputs: LossInputs<'_>, h: f64) -> Result<f64> {
    let mut obj = Objective { net, inputs };
    grad_check(&mut obj, h)
}

/// Line-delimited progress event.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochEvent {
    pub event: &'static str,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    /// Deterministic all-blocks-on error on the eval split, per epoch.
    pub epoch_eval_error: Vec<Option<f64>>,
    pub final_train_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Not serialized: reports must be reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Argmax error of all-blocks-on eval-mode predictions.
pub fn deterministic_error(net: &ResidualNet, ds: &Dataset) -> Result<f64> {
    let logits = net.forward(&ds.features, &GateMask::all_on(net.num_blocks()), Mode::Eval)?;
    let preds = PredictionSet::new(softmax_rows(&logits), ds.labels.clone())?;
    Ok(metrics::test_error(&preds))
}

/// Trains `net` in place. Batches come from a seeded per-epoch shuffle;
/// batches of a single sample are skipped when batch norm is on. MCSD draws
/// one gate mask per batch, MCDO one dropout mask per batch.
pub fn train(
    net: &mut ResidualNet,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochEvent),
) -> Result<TrainReport> {
    let spec = *net.spec();
    cfg.validate(&spec)?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if train_set.dim() != spec.input_dim {
        return Err(Error::shape("training features do not match network input"));
    }
    if train_set.num_classes > spec.num_classes {
        return Err(Error::shape("dataset has more classes than the network"));
    }
    let started = Instant::now();
    let schedule = cfg.schedule(net.num_blocks())?;
    let gate_convention = if cfg.scale_kept_blocks {
        GateConvention::Inverted
    } else {
        GateConvention::Unscaled
    };
    let n = train_set.len();
    let min_batch = if spec.use_batchnorm { 2 } else { 1 };

    let mut velocity: Vec<Vec<f64>> = net.param_slices().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        epoch_eval_error: Vec::with_capacity(cfg.epochs),
        final_train_error: 0.0,
        checkpoint: None,
        wall_clock_secs: 0.0,
    };
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = permutation(n, cfg.seed, Domain::Shuffle, epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < min_batch {
                continue;
            }
            let x = train_set.features.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let mask = match cfg.regime {
                Regime::Mcsd => {
                    let mut rng = rng::stream(cfg.seed, Domain::TrainGates, step, 0);
                    sample_gates(&schedule, &mut rng, gate_convention)
                }
                Regime::Det | Regime::Mcdo => GateMask::all_on(net.num_blocks()),
            };
            let dropout = match cfg.regime {
                Regime::Mcdo => Some(DropoutMasks::sample(net.num_blocks(), idx.len(), spec.hidden_dim, cfg.dropout_rate, |l| {
                    rng::stream(cfg.seed, Domain::TrainDropout, step, l as u64)
                })?),
                _ => None,
            };
            let inputs = LossInputs {
                x: &x,
                labels: &labels,
                mask: &mask,
                dropout: dropout.as_ref(),
                weight_decay: cfg.weight_decay,
                schedule: &schedule,
                convention: cfg.decay_convention,
            };
            let (loss, grad, trace) = mcsd_loss_and_grad(net, &inputs)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            net.absorb_batch_stats(&trace)?;
            if lr != 0.0 {
                for ((p, v), g) in net.params_mut().into_iter().zip(&mut velocity).zip(grad.tensors()) {
                    for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = cfg.momentum * *vi + gi;
                        *pi -= lr * *vi;
                    }
                }
            }
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let epoch_loss = if batches > 0 { loss_sum / batches as f64 } else { f64::NAN };
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: batches,
                loss: epoch_loss,
            });
        }
        let eval_error = eval_set.map(|ds| deterministic_error(net, ds)).transpose()?;
        report.epoch_loss.push(epoch_loss);
        report.epoch_eval_error.push(eval_error);
        on_epoch(&EpochEvent {
            event: "epoch",
            epoch,
            lr,
            train_loss: epoch_loss,
            eval_error,
        });
    }
    report.final_train_error = deterministic_error(net, train_set)?;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub candidate: f64,
    pub val_nll: f64,
    pub val_error: f64,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best: f64,
    pub table: Vec<SearchRow>,
    pub best_net: ResidualNet,
    pub best_report: TrainReport,
}

/// Trains one model per candidate (`q_final` for MCSD, dropout rate for
/// MCDO) from the same seed and keeps the one with the lowest validation
/// NLL under `passes` MC passes. Ties keep the earlier candidate.
pub fn search_drop_rate(
    spec: NetworkSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    candidates: &[f64],
    cfg: &TrainConfig,
    passes: usize,
) -> Result<SearchResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("search needs at least one candidate"));
    }
    let mut best: Option<(usize, ResidualNet, TrainReport)> = None;
    let mut table = Vec::with_capacity(candidates.len());
    for (i, &cand) in candidates.iter().enumerate() {
        let mut c = cfg.clone();
        match cfg.regime {
            Regime::Mcsd => c.q_final = cand,
            Regime::Mcdo => c.dropout_rate = cand,
            Regime::Det => {}
        }
        let mut net = ResidualNet::new(spec, c.seed)?;
        let report = train(&mut net, train_set, None, &c, |_| {})?;
        let schedule = c.schedule(net.num_blocks())?;
        let mc = McConfig::new(c.regime, passes, c.seed).with_dropout(c.dropout_rate);
        let summary = mc_predict(&net, &val_set.features, &schedule, &mc)?;
        let preds = PredictionSet::new(summary.mean_probs, val_set.labels.clone())?;
        let row = SearchRow {
            candidate: cand,
            val_nll: metrics::nll(&preds),
            val_error: metrics::test_error(&preds),
        };
        let better = match &best {
            None => true,
            Some((j, _, _)) => row.val_nll < table.get(*j).map_or(f64::INFINITY, |r: &SearchRow| r.val_nll),
        };
        table.push(row);
        if better {
            best = Some((i, net, report));
        }
    }
    let (i, best_net, best_report) = best.expect("at least one candidate");
    Ok(SearchResult {
        best: candidates[i],
        table,
        best_net,
        best_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, gen_moons};
    use crate::resnet::{Block, Linear};

    fn spec(blocks: usize, bn: bool) -> NetworkSpec {
        NetworkSpec {
            input_dim: 2,
            hidden_dim: 6,
            num_blocks: blocks,
            num_classes: 3,
            use_batchnorm: bn,
        }
    }

    fn batch() -> (Matrix, Vec<usize>) {
        let x = Matrix::new(5, 2, vec![0.5, 1.0, -1.0, 0.2, 0.3, -0.8, 1.5, 1.5, -0.4, -0.9]).unwrap();
        (x, vec![0, 2, 1, 1, 0])
    }

    #[test]
    fn zero_decay_is_plain_cross_entropy() {
        let net = ResidualNet::new(spec(3, true), 1).unwrap();
        let (x, y) = batch();
        let mask = GateMask::all_on(3);
        let schedule = DepthSchedule::linear_decay(3, 0.5).unwrap();
        let inputs = LossInputs {
            x: &x,
            labels: &y,
            mask: &mask,
            dropout: None,
            weight_decay: 0.0,
            schedule: &schedule,
            convention: DecayConvention::Survival,
        };
        let logits = net.forward(&x, &mask, Mode::Train).unwrap();
        let (ce, _) = softmax_cross_entropy(&logits, &y);
        assert_eq!(mcsd_loss(&net, &inputs).unwrap(), ce);
    }

    #[test]
    fn decay_term_single_block_example() {
        // q = 0.5, λ = 1, ‖M‖² = 4, batch 2 → 0.5·4/2 = 1.
        let s = NetworkSpec {
            input_dim: 1,
            hidden_dim: 1,
            num_blocks: 1,
            num_classes: 2,
            use_batchnorm: false,
        };
        let block = Block {
            fc1: Linear {
                weight: Matrix::filled(1, 1, 2.0_f64.sqrt()),
                bias: vec![0.0],
            },
            bn: None,
            fc2: Linear {
                weight: Matrix::filled(1, 1, 2.0_f64.sqrt()),
                bias: vec![0.0],
            },
        };
        let net = ResidualNet::from_parts(s, Linear::zeros(1, 1), vec![block], Linear::zeros(1, 2)).unwrap();
        let sched = DepthSchedule::constant(1, 0.5).unwrap();
        let d = decay_term(&net, 1.0, &sched, 2, DecayConvention::Survival);
        assert!((d - 1.0).abs() < 1e-15);
        let flipped = decay_term(&net, 1.0, &sched, 2, DecayConvention::Drop);
        assert!((flipped - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_data_term_is_log_c() {
        let mut net = ResidualNet::new(spec(2, false), 1).unwrap();
        net.head = Linear::zeros(6, 3);
        let (x, y) = batch();
        let mask = GateMask::all_on(2);
        let sched = DepthSchedule::all_survive(2);
        let inputs = LossInputs {
            x: &x,
            labels: &y,
            mask: &mask,
            dropout: None,
            weight_decay: 0.0,
            schedule: &sched,
            convention: DecayConvention::Survival,
        };
        assert!((mcsd_loss(&net, &inputs).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for (seed, bn) in [(1, true), (2, false), (3, true)] {
            let mut net = ResidualNet::new(spec(3, bn), seed).unwrap();
            let (x, y) = batch();
            let mask = GateMask::new(vec![true, false, true], vec![1.0, 1.0, 2.0]).unwrap();
            let sched = DepthSchedule::linear_decay(3, 0.5).unwrap();
            let dropout = DropoutMasks::sample(3, 5, 6, 0.3, |l| rng::stream(seed, Domain::Dropout, 0, l as u64)).unwrap();
            let inputs = LossInputs {
                x: &x,
                labels: &y,
                mask: &mask,
                dropout: Some(&dropout),
                weight_decay: 0.3,
                schedule: &sched,
                convention: DecayConvention::Survival,
            };
            let err = grad_check_loss(&mut net, inputs, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn dropped_block_gets_zero_data_gradient() {
        let net = ResidualNet::new(spec(3, true), 4).unwrap();
        let (x, y) = batch();
        let mask = GateMask::from_gates(vec![true, false, true]);
        let sched = DepthSchedule::all_survive(3);
        let inputs = LossInputs {
            x: &x,
            labels: &y,
            mask: &mask,
            dropout: None,
            weight_decay: 0.0,
            schedule: &sched,
            convention: DecayConvention::Survival,
        };
        let (_, grad, _) = mcsd_loss_and_grad(&net, &inputs).unwrap();
        // Tensors of block 1: indices 2 + 6 .. 2 + 12.
        for t in &grad.tensors()[8..14] {
            assert!(t.iter().all(|g| *g == 0.0));
        }
        assert!(grad.tensors()[2].iter().any(|g| *g != 0.0));
    }

    #[test]
    fn gradient_is_additive_over_losses() {
        // d(A + B) = dA + dB with A, B the losses of two disjoint batches.
        let net = ResidualNet::new(spec(2, false), 5).unwrap();
        let (x, y) = batch();
        let mask = GateMask::all_on(2);
        let part = |rows: &[usize]| {
            let xs = x.select_rows(rows);
            let ys: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
            let trace = net.record(&xs, &mask, Mode::Eval, None).unwrap();
            let (_, d) = softmax_cross_entropy(trace.logits(), &ys);
            net.backward(&trace, &d).unwrap()
        };
        let mut sum = part(&[0, 1]);
        sum.add_assign(&part(&[2, 3, 4])).unwrap();
        // Stack both parts, reweighting rows so each part keeps its own mean.
        let trace = net.record(&x, &mask, Mode::Eval, None).unwrap();
        let (_, mut d) = softmax_cross_entropy(trace.logits(), &y);
        for r in 0..5 {
            let w = if r < 2 { 5.0 / 2.0 } else { 5.0 / 3.0 };
            for v in d.row_mut(r) {
                *v *= w;
            }
        }
        let joint = net.backward(&trace, &d).unwrap();
        for (a, b) in sum.flatten().iter().zip(joint.flatten()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    fn blobs() -> Dataset {
        gen_blobs(200, &[vec![-3.0, 0.0], vec![3.0, 0.0]], 0.3, 1).unwrap()
    }

    #[test]
    fn separable_blobs_reach_zero_training_error() {
        let ds = blobs();
        let mut net = ResidualNet::new(
            NetworkSpec {
                num_classes: 2,
                ..spec(2, true)
            },
            0,
        )
        .unwrap();
        let cfg = TrainConfig {
            regime: Regime::Det,
            epochs: 200,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &ds, Some(&ds), &cfg, |_| {}).unwrap();
        assert_eq!(report.final_train_error, 0.0);
        assert_eq!(report.epoch_loss.len(), 200);
    }

    #[test]
    fn zero_lr_freezes_parameters() {
        let ds = blobs();
        let s = NetworkSpec {
            num_classes: 2,
            ..spec(2, true)
        };
        let mut net = ResidualNet::new(s, 0).unwrap();
        let before: Vec<Vec<f64>> = net.param_slices().iter().map(|p| p.to_vec()).collect();
        let cfg = TrainConfig {
            regime: Regime::Det,
            epochs: 4,
            lr: 0.0,
            batch_size: 200,
            ..TrainConfig::default()
        };
        let report = train(&mut net, &ds, None, &cfg, |_| {}).unwrap();
        let after: Vec<Vec<f64>> = net.param_slices().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);
        // Shuffling only reorders the batch sums.
        assert!(report.epoch_loss.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn training_is_deterministic_and_q_one_matches_det() {
        let ds = gen_moons(120, 0.2, 3).unwrap();
        let s = NetworkSpec {
            num_classes: 2,
            ..spec(3, true)
        };
        let run = |regime, q_final| {
            let mut net = ResidualNet::new(s, 7).unwrap();
            let cfg = TrainConfig {
                regime,
                q_final,
                epochs: 5,
                seed: 7,
                ..TrainConfig::default()
            };
            train(&mut net, &ds, None, &cfg, |_| {}).unwrap();
            net
        };
        assert_eq!(run(Regime::Mcsd, 0.5), run(Regime::Mcsd, 0.5));
        assert_eq!(run(Regime::Mcsd, 1.0), run(Regime::Det, 1.0));
    }

    #[test]
    fn first_epoch_reduces_loss_on_blobs() {
        let ds = blobs();
        let s = NetworkSpec {
            num_classes: 2,
            ..spec(2, true)
        };
        let mut failures = 0;
        for seed in 0..5 {
            let mut net = ResidualNet::new(s, seed).unwrap();
            let sched = DepthSchedule::all_survive(2);
            let mask = GateMask::all_on(2);
            let inputs = LossInputs {
                x: &ds.features,
                labels: &ds.labels,
                mask: &mask,
                dropout: None,
                weight_decay: 0.0,
                schedule: &sched,
                convention: DecayConvention::Survival,
            };
            let before = mcsd_loss(&net, &inputs).unwrap();
            let cfg = TrainConfig {
                regime: Regime::Det,
                epochs: 1,
                lr: 0.1,
                weight_decay: 0.0,
                seed,
                step_decay: false,
                ..TrainConfig::default()
            };
            train(&mut net, &ds, None, &cfg, |_| {}).unwrap();
            if mcsd_loss(&net, &inputs).unwrap() >= before {
                failures += 1;
            }
        }
        assert!(failures <= 1);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = blobs();
        let s = NetworkSpec {
            num_classes: 2,
            ..spec(2, false)
        };
        let mut net = ResidualNet::new(s, 0).unwrap();
        let cfg = TrainConfig {
            regime: Regime::Det,
            lr: 1e6,
            momentum: 0.0,
            epochs: 50,
            ..TrainConfig::default()
        };
        let err = train(&mut net, &ds, None, &cfg, |_| {}).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn search_single_candidate_and_table() {
        let ds = gen_moons(160, 0.3, 1).unwrap();
        let (tr, va) = (ds.subset(&(0..160).step_by(2).collect::<Vec<_>>()), ds.subset(&(1..160).step_by(2).collect::<Vec<_>>()));
        let s = NetworkSpec {
            num_classes: 2,
            ..spec(3, true)
        };
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let one = search_drop_rate(s, &tr, &va, &[0.7], &cfg, 5).unwrap();
        assert_eq!(one.best, 0.7);
        assert_eq!(one.table.len(), 1);

        let three = search_drop_rate(s, &tr, &va, &[0.5, 0.7, 0.9], &cfg, 5).unwrap();
        assert_eq!(three.table.len(), 3);
        let min = three.table.iter().map(|r| r.val_nll).fold(f64::INFINITY, f64::min);
        let best_row = three.table.iter().find(|r| r.candidate == three.best).unwrap();
        assert_eq!(best_row.val_nll, min);
        assert!(search_drop_rate(s, &tr, &va, &[], &cfg, 5).is_err());
    }

    #[test]
    fn search_with_full_survival_equals_det_training() {
        let ds = gen_moons(80, 0.3, 2).unwrap();
        let s = NetworkSpec {
            num_classes: 2,
            ..spec(2, true)
        };
        let cfg = TrainConfig {
            epochs: 3,
            seed: 4,
            ..TrainConfig::default()
        };
        let found = search_drop_rate(s, &ds, &ds, &[1.0], &cfg, 3).unwrap();
        let mut det = ResidualNet::new(s, 4).unwrap();
        train(&mut det, &ds, None, &TrainConfig { regime: Regime::Det, ..cfg }, |_| {}).unwrap();
        assert_eq!(found.best_net, det);
    }
}
