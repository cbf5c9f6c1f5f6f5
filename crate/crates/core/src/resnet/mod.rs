//! Residual MLP: a linear stem, `L` residual blocks
//! `y = x + s·F(x)` with `F = Linear → BatchNorm → ReLU → Linear`, and a
//! linear classification head.
//!
//! Every forward pass takes an explicit [`GateMask`]; a block whose gate is
//! off is skipped entirely, so its output is the identity on its input.

mod batchnorm;
pub mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::{affine, affine_backward, relu, relu_backward};
use crate::numerics::{Gradient, Matrix};
use crate::rng::{self, Domain};

pub use batchnorm::{BatchNorm, BnCache, Mode, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_FORMAT_VERSION};

/// Architecture of a [`ResidualNet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_classes: usize,
    #[serde(default = "default_true")]
    pub use_batchnorm: bool,
}

fn default_true() -> bool {
    true
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("network dimensions must be >= 1"));
        }
        if self.num_blocks == 0 {
            return Err(Error::invalid("network needs at least one residual block"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("network needs at least two classes"));
        }
        Ok(())
    }
}

/// Affine layer `x · weight + bias`, `weight` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Linear {
            weight: Matrix::from_raw(input, output, data),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        affine(x, &self.weight, &self.bias)
    }

    fn flops(&self, batch: usize) -> u64 {
        (2 * batch * self.input_dim() * self.output_dim()) as u64
    }
}

/// Parameters of one residual block's branch `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub fc1: Linear,
    pub bn: Option<BatchNorm>,
    pub fc2: Linear,
}

impl Block {
    /// Squared norm of the block's weight matrices (the decay target).
    pub fn weight_norm_sq(&self) -> f64 {
        self.fc1.weight.frobenius_sq() + self.fc2.weight.frobenius_sq()
    }
}

/// Per-block gates and the multiplier applied to each active branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateMask {
    gates: Vec<bool>,
    scales: Vec<f64>,
}

impl GateMask {
    pub fn new(gates: Vec<bool>, scales: Vec<f64>) -> Result<Self> {
        if gates.len() != scales.len() {
            return Err(Error::shape(format!(
                "{} gates but {} scales",
                gates.len(),
                scales.len()
            )));
        }
        if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid(format!("gate scale must be positive, got {bad}")));
        }
        Ok(GateMask { gates, scales })
    }

    /// Unit scales for every block.
    pub fn from_gates(gates: Vec<bool>) -> Self {
        let scales = vec![1.0; gates.len()];
        GateMask { gates, scales }
    }

    pub fn all_on(blocks: usize) -> Self {
        GateMask::from_gates(vec![true; blocks])
    }

    pub fn all_off(blocks: usize) -> Self {
        GateMask::from_gates(vec![false; blocks])
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn gates(&self) -> &[bool] {
        &self.gates
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn is_on(&self, block: usize) -> bool {
        self.gates[block]
    }

    pub fn active_count(&self) -> usize {
        self.gates.iter().filter(|g| **g).count()
    }
}

/// Unit-level dropout multipliers (0 or `1/(1−rate)`), one `batch × hidden`
/// matrix per block, applied to the batch-norm output inside `F`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    per_block: Vec<Matrix>,
}

impl DropoutMasks {
    /// Draws a fresh mask for block `l` from `stream_for(l)`.
    pub fn sample<R: Rng>(
        blocks: usize,
        batch: usize,
        hidden: usize,
        rate: f64,
        mut stream_for: impl FnMut(usize) -> R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        let keep = 1.0 - rate;
        let per_block = (0..blocks)
            .map(|l| {
                let mut rng = stream_for(l);
                let data = (0..batch * hidden)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                Matrix::from_raw(batch, hidden, data)
            })
            .collect();
        Ok(DropoutMasks { per_block })
    }

    pub fn new(per_block: Vec<Matrix>) -> Self {
        DropoutMasks { per_block }
    }

    pub fn block(&self, l: usize) -> &Matrix {
        &self.per_block[l]
    }
}

#[derive(Clone, Debug)]
enum BlockTrace {
    Skipped,
    Active {
        scale: f64,
        input: Matrix,
        pre_bn: Matrix,
        bn: Option<BnCache>,
        dropout: Option<Matrix>,
        pre_relu: Matrix,
        act: Matrix,
    },
}

/// Result of a forward pass. Recorded traces keep the intermediates needed
/// by [`ResidualNet::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    recorded: bool,
    mode: Mode,
    input: Matrix,
    stem_out: Matrix,
    blocks: Vec<BlockTrace>,
    hidden: Matrix,
    logits: Matrix,
    flops: u64,
}

impl ForwardTrace {
    /// A trace with nothing recorded; backward on it is a usage error.
    pub fn empty() -> Self {
        ForwardTrace {
            recorded: false,
            mode: Mode::Eval,
            input: Matrix::zeros(0, 0),
            stem_out: Matrix::zeros(0, 0),
            blocks: Vec::new(),
            hidden: Matrix::zeros(0, 0),
            logits: Matrix::zeros(0, 0),
            flops: 0,
        }
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn into_logits(self) -> Matrix {
        self.logits
    }

    /// Activation after the last residual block (input to the head).
    pub fn hidden(&self) -> &Matrix {
        &self.hidden
    }

    /// Floating-point operations performed by the pass.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn is_recorded(&self) -> bool {
        self.recorded
    }
}

/// Row-normalized penultimate activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vectors: Matrix,
    /// Rows whose activation norm was below `1e-12` before normalization.
    pub degenerate: Vec<bool>,
}

pub const EMBED_NORM_FLOOR: f64 = 1e-12;

/// A residual MLP classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualNet {
    spec: NetworkSpec,
    pub stem: Linear,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

impl ResidualNet {
    /// Glorot-initialized network, deterministic in `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let h = spec.hidden_dim;
        let mut layer = 0u64;
        let mut next = || {
            layer += 1;
            rng::stream(seed, Domain::Init, layer, 0)
        };
        let stem = Linear::glorot(spec.input_dim, h, &mut next());
        let blocks = (0..spec.num_blocks)
            .map(|_| Block {
                fc1: Linear::glorot(h, h, &mut next()),
                bn: spec.use_batchnorm.then(|| BatchNorm::new(h)),
                fc2: Linear::glorot(h, h, &mut next()),
            })
            .collect();
        let head = Linear::glorot(h, spec.num_classes, &mut next());
        Ok(ResidualNet {
            spec,
            stem,
            blocks,
            head,
        })
    }

    /// Assembles a network from explicit layers, checking every shape.
    pub fn from_parts(spec: NetworkSpec, stem: Linear, blocks: Vec<Block>, head: Linear) -> Result<Self> {
        spec.validate()?;
        let h = spec.hidden_dim;
        let check = |lin: &Linear, i: usize, o: usize, name: &str| -> Result<()> {
            if lin.input_dim() != i || lin.output_dim() != o || lin.bias.len() != o {
                return Err(Error::shape(format!(
                    "{name}: expected {i}x{o}, got {}x{} (bias {})",
                    lin.input_dim(),
                    lin.output_dim(),
                    lin.bias.len()
                )));
            }
            Ok(())
        };
        check(&stem, spec.input_dim, h, "stem")?;
        check(&head, h, spec.num_classes, "head")?;
        if blocks.len() != spec.num_blocks {
            return Err(Error::shape(format!(
                "spec has {} blocks, got {}",
                spec.num_blocks,
                blocks.len()
            )));
        }
        for (l, b) in blocks.iter().enumerate() {
            check(&b.fc1, h, h, &format!("block {l} fc1"))?;
            check(&b.fc2, h, h, &format!("block {l} fc2"))?;
            match (&b.bn, spec.use_batchnorm) {
                (Some(bn), true) if bn.dim() == h => {}
                (None, false) => {}
                _ => return Err(Error::shape(format!("block {l}: batch norm does not match spec"))),
            }
        }
        let net = ResidualNet {
            spec,
            stem,
            blocks,
            head,
        };
        if net.param_slices().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("network parameters must be finite"));
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// The same network with block `l` physically removed.
    pub fn without_block(&self, l: usize) -> Result<Self> {
        if l >= self.blocks.len() {
            return Err(Error::invalid(format!("no block {l}")));
        }
        if self.blocks.len() == 1 {
            return Err(Error::invalid("cannot remove the only residual block"));
        }
        let mut net = self.clone();
        net.blocks.remove(l);
        net.spec.num_blocks -= 1;
        Ok(net)
    }

    /// Logits for `x` under `mask`. Train mode uses batch statistics but does
    /// not update the running statistics.
    pub fn forward(&self, x: &Matrix, mask: &GateMask, mode: Mode) -> Result<Matrix> {
        Ok(self.run(x, mask, mode, None, false)?.logits)
    }

    /// Forward pass with unit dropout inside every active block.
    pub fn forward_dropout(
        &self,
        x: &Matrix,
        mask: &GateMask,
        mode: Mode,
        dropout: &DropoutMasks,
    ) -> Result<Matrix> {
        Ok(self.run(x, mask, mode, Some(dropout), false)?.logits)
    }

    /// Forward pass without recording intermediates.
    pub fn trace(
        &self,
        x: &Matrix,
        mask: &GateMask,
        mode: Mode,
        dropout: Option<&DropoutMasks>,
    ) -> Result<ForwardTrace> {
        self.run(x, mask, mode, dropout, false)
    }

    /// Forward pass recording everything [`ResidualNet::backward`] needs.
    pub fn record(
        &self,
        x: &Matrix,
        mask: &GateMask,
        mode: Mode,
        dropout: Option<&DropoutMasks>,
    ) -> Result<ForwardTrace> {
        self.run(x, mask, mode, dropout, true)
    }

    fn run(
        &self,
        x: &Matrix,
        mask: &GateMask,
        mode: Mode,
        dropout: Option<&DropoutMasks>,
        record: bool,
    ) -> Result<ForwardTrace> {
        let h = self.spec.hidden_dim;
        if x.cols() != self.spec.input_dim {
            return Err(Error::shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.spec.input_dim
            )));
        }
        if mask.len() != self.blocks.len() {
            return Err(Error::shape(format!(
                "mask has {} gates, network has {} blocks",
                mask.len(),
                self.blocks.len()
            )));
        }
        if let Some(d) = dropout {
            if d.per_block.len() != self.blocks.len()
                || d.per_block.iter().any(|m| m.shape() != (x.rows(), h))
            {
                return Err(Error::shape("dropout masks do not match batch and network"));
            }
        }
        let n = x.rows();
        let nd = (n * h) as u64;
        let mut flops = self.stem.flops(n);
        let stem_out = self.stem.apply(x);
        let mut hcur = stem_out.clone();
        let mut traces = Vec::with_capacity(if record { self.blocks.len() } else { 0 });

        for (l, block) in self.blocks.iter().enumerate() {
            if !mask.is_on(l) {
                if record {
                    traces.push(BlockTrace::Skipped);
                }
                continue;
            }
            let scale = mask.scales()[l];
            let pre_bn = block.fc1.apply(&hcur);
            flops += block.fc1.flops(n);
            let (post_bn, bn_cache) = match (&block.bn, mode) {
                (None, _) => (pre_bn.clone(), None),
                (Some(bn), Mode::Train) => {
                    let (out, cache) = bn.forward_train(&pre_bn)?;
                    (out, Some(cache))
                }
                (Some(bn), Mode::Eval) => (bn.forward_eval(&pre_bn), None),
            };
            if block.bn.is_some() {
                flops += 5 * nd;
            }
            let (pre_relu, drop) = match dropout {
                Some(d) => {
                    flops += nd;
                    let m = d.block(l);
                    (post_bn.zip_map(m, |a, b| a * b), Some(m.clone()))
                }
                None => (post_bn, None),
            };
            let act = relu(&pre_relu);
            let mut branch = block.fc2.apply(&act);
            flops += nd + block.fc2.flops(n);
            if scale != 1.0 {
                for v in branch.data_mut() {
                    *v *= scale;
                }
            }
            flops += 2 * nd;
            let input = std::mem::replace(&mut hcur, branch);
            hcur.add_assign_unchecked(&input);
            if record {
                traces.push(BlockTrace::Active {
                    scale,
                    input,
                    pre_bn,
                    bn: bn_cache,
                    dropout: drop,
                    pre_relu,
                    act,
                });
            }
        }

        let logits = self.head.apply(&hcur);
        flops += self.head.flops(n);
        Ok(ForwardTrace {
            recorded: record,
            mode,
            input: if record { x.clone() } else { Matrix::zeros(0, 0) },
            stem_out: if record { stem_out } else { Matrix::zeros(0, 0) },
            blocks: traces,
            hidden: hcur,
            logits,
            flops,
        })
    }

    /// Exact reverse-mode gradient of a scalar loss, given its gradient
    /// w.r.t. the logits of a recorded pass.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &Matrix) -> Result<Gradient> {
        if !trace.recorded {
            return Err(Error::usage("backward called without a recorded forward pass"));
        }
        if trace.blocks.len() != self.blocks.len() || trace.input.cols() != self.spec.input_dim {
            return Err(Error::usage("forward trace was recorded on a different network"));
        }
        if dlogits.shape() != trace.logits.shape() {
            return Err(Error::shape("logit gradient does not match recorded logits"));
        }

        let (mut dh, dw_head, db_head) = affine_backward(&trace.hidden, &self.head.weight, dlogits);
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (block, bt) in self.blocks.iter().zip(&trace.blocks).rev() {
            match bt {
                BlockTrace::Skipped => block_grads.push(None),
                BlockTrace::Active {
                    scale,
                    input,
                    pre_bn,
                    bn,
                    dropout,
                    pre_relu,
                    act,
                } => {
                    let dbranch = dh.scale(*scale);
                    let (dact, dw2, db2) = affine_backward(act, &block.fc2.weight, &dbranch);
                    let mut dpost = relu_backward(pre_relu, &dact);
                    if let Some(m) = dropout {
                        dpost = dpost.zip_map(m, |g, k| g * k);
                    }
                    let (dpre, bn_grads) = match (&block.bn, bn) {
                        (None, _) => (dpost, None),
                        (Some(layer), Some(cache)) => {
                            let (dx, dg, db) = layer.backward_train(cache, &dpost);
                            (dx, Some((dg, db)))
                        }
                        (Some(layer), None) => {
                            debug_assert_eq!(trace.mode, Mode::Eval);
                            let (dx, dg, db) = layer.backward_eval(pre_bn, &dpost);
                            (dx, Some((dg, db)))
                        }
                    };
                    let (dx, dw1, db1) = affine_backward(input, &block.fc1.weight, &dpre);
                    dh.add_assign_unchecked(&dx);
                    block_grads.push(Some((dw1, db1, bn_grads, dw2, db2)));
                }
            }
        }
        block_grads.reverse();
        let (_, dw_stem, db_stem) = affine_backward(&trace.input, &self.stem.weight, &dh);
        debug_assert_eq!(trace.stem_out.shape(), dh.shape());

        let mut tensors = Vec::with_capacity(self.param_count_tensors());
        tensors.push(dw_stem.into_data());
        tensors.push(db_stem);
        for (block, g) in self.blocks.iter().zip(block_grads) {
            let h = self.spec.hidden_dim;
            match g {
                Some((dw1, db1, bn, dw2, db2)) => {
                    tensors.push(dw1.into_data());
                    tensors.push(db1);
                    if let Some((dg, db)) = bn {
                        tensors.push(dg);
                        tensors.push(db);
                    }
                    tensors.push(dw2.into_data());
                    tensors.push(db2);
                }
                None => {
                    tensors.push(vec![0.0; h * h]);
                    tensors.push(vec![0.0; h]);
                    if block.bn.is_some() {
                        tensors.push(vec![0.0; h]);
                        tensors.push(vec![0.0; h]);
                    }
                    tensors.push(vec![0.0; h * h]);
                    tensors.push(vec![0.0; h]);
                }
            }
        }
        tensors.push(dw_head.into_data());
        tensors.push(db_head);
        Ok(Gradient::new(tensors))
    }

    /// Folds the batch statistics of a train-mode trace into the running
    /// statistics of every active batch-norm layer.
    pub fn absorb_batch_stats(&mut self, trace: &ForwardTrace) -> Result<()> {
        if !trace.recorded || trace.blocks.len() != self.blocks.len() {
            return Err(Error::usage("batch statistics need a recorded trace of this network"));
        }
        for (block, bt) in self.blocks.iter_mut().zip(&trace.blocks) {
            if let (Some(bn), BlockTrace::Active { bn: Some(cache), .. }) = (&mut block.bn, bt) {
                bn.update_running(cache);
            }
        }
        Ok(())
    }

    /// Penultimate activations in eval mode, L2-normalized per row.
    pub fn embed(&self, x: &Matrix, mask: &GateMask) -> Result<Embedding> {
        let hidden = self.run(x, mask, Mode::Eval, None, false)?.hidden;
        Ok(normalize_rows(hidden))
    }

    fn param_count_tensors(&self) -> usize {
        4 + self.blocks.len() * if self.spec.use_batchnorm { 6 } else { 4 }
    }

    /// Parameter tensors in gradient order: stem weight/bias, then per block
    /// fc1 weight/bias, [bn gamma/beta], fc2 weight/bias, then head.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(self.param_count_tensors());
        out.push(self.stem.weight.data());
        out.push(&self.stem.bias);
        for b in &self.blocks {
            out.push(b.fc1.weight.data());
            out.push(&b.fc1.bias);
            if let Some(bn) = &b.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
            out.push(b.fc2.weight.data());
            out.push(&b.fc2.bias);
        }
        out.push(self.head.weight.data());
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(self.stem.weight.data_mut());
        out.push(&mut self.stem.bias);
        for b in &mut self.blocks {
            out.push(b.fc1.weight.data_mut());
            out.push(&mut b.fc1.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
            out.push(b.fc2.weight.data_mut());
            out.push(&mut b.fc2.bias);
        }
        out.push(self.head.weight.data_mut());
        out.push(&mut self.head.bias);
        out
    }

    /// Names and shapes matching [`ResidualNet::param_slices`].
    pub fn param_layout(&self) -> Vec<(String, [usize; 2])> {
        let h = self.spec.hidden_dim;
        let mut out = vec![
            ("stem.weight".to_string(), [self.spec.input_dim, h]),
            ("stem.bias".to_string(), [1, h]),
        ];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{l}.fc1.weight"), [h, h]));
            out.push((format!("blocks.{l}.fc1.bias"), [1, h]));
            if b.bn.is_some() {
                out.push((format!("blocks.{l}.bn.gamma"), [1, h]));
                out.push((format!("blocks.{l}.bn.beta"), [1, h]));
            }
            out.push((format!("blocks.{l}.fc2.weight"), [h, h]));
            out.push((format!("blocks.{l}.fc2.bias"), [1, h]));
        }
        out.push(("head.weight".to_string(), [h, self.spec.num_classes]));
        out.push(("head.bias".to_string(), [1, self.spec.num_classes]));
        out
    }
}

pub(crate) fn normalize_rows(mut m: Matrix) -> Embedding {
    let mut degenerate = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        degenerate.push(norm < EMBED_NORM_FLOOR);
        let d = norm.max(EMBED_NORM_FLOOR);
        for v in row.iter_mut() {
            *v /= d;
        }
    }
    Embedding {
        vectors: m,
        degenerate,
    }
}
